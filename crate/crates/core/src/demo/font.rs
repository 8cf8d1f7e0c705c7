//! 5×7 bitmap digits. Each row is 5 bits, most significant bit leftmost.

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Glyph plus one blank column.
pub const CELL_W: usize = GLYPH_W + 1;

const DIGITS: [[u8; GLYPH_H]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

/// Whether glyph `digit` has ink at `(col, row)`; out-of-range is blank.
pub fn ink(digit: u8, col: usize, row: usize) -> bool {
    if digit > 9 || col >= GLYPH_W || row >= GLYPH_H {
        return false;
    }
    DIGITS[digit as usize][row] >> (GLYPH_W - 1 - col) & 1 == 1
}
