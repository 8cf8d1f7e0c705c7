//! Desk-scale end-to-end demonstration on synthetic curved digit strings:
//! scene synthesis, a toy differentiable recognizer, the fiducial
//! finetuning loop and the fiducial-count ablation.

pub mod ablation;
pub mod font;
pub mod recognizer;
pub mod scene;
pub mod train;

pub use ablation::{eval_ablation, eval_scene, train_recognizer_on_annotations, AblationRow, EvalConfig, SceneEval};
pub use recognizer::{recognize, recognize_backward, SequenceLogits, ToyRecognizer};
pub use scene::{synth_scene, Baseline, SceneConfig, ShapeMix, SyntheticScene};
pub use train::{train_demo, Optimizer, Perturbation, RecognizerInit, StepRecord, TrainConfig, TrainReport, WeightMode};
