//! PNG contact sheets with a 3x5 bitmap font for row and column labels.

use std::path::Path;

use alae_core::image::encode_png;

use crate::{config_err, Result};

/// An 8-bit RGB tile.
#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Tile {
    pub fn from_image<T: alae_core::Scalar>(image: &alae_core::image::ImageTensor<T>) -> Self {
        Self {
            width: image.width(),
            height: image.height(),
            rgb: image.to_rgb8(),
        }
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, rgb) = alae_core::image::decode_png(bytes)?;
        Ok(Self {
            width: w as usize,
            height: h as usize,
            rgb,
        })
    }
}

const GAP: usize = 2;
const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;
const BACKGROUND: u8 = 255;
const INK: [u8; 3] = [20, 20, 20];

fn glyph(c: char) -> &'static str {
    match c.to_ascii_uppercase() {
        'A' => "010101111101101",
        'B' => "110101110101110",
        'C' => "011100100100011",
        'D' => "110101101101110",
        'E' => "111100110100111",
        'F' => "111100110100100",
        'G' => "011100101101011",
        'H' => "101101111101101",
        'I' => "111010010010111",
        'J' => "001001001101010",
        'K' => "101101110101101",
        'L' => "100100100100111",
        'M' => "101111111101101",
        'N' => "110101101101101",
        'O' => "010101101101010",
        'P' => "110101110100100",
        'Q' => "010101101110011",
        'R' => "110101110101101",
        'S' => "011100010001110",
        'T' => "111010010010010",
        'U' => "101101101101111",
        'V' => "101101101101010",
        'W' => "101101111111101",
        'X' => "101101010101101",
        'Y' => "101101010010010",
        'Z' => "111001010100111",
        '0' => "111101101101111",
        '1' => "010110010010111",
        '2' => "110001010100111",
        '3' => "110001010001110",
        '4' => "101101111001001",
        '5' => "111100110001110",
        '6' => "011100111101111",
        '7' => "111001010010010",
        '8' => "111101111101111",
        '9' => "111101111001110",
        '-' => "000000111000000",
        '+' => "000010111010000",
        '.' => "000000000000010",
        '_' => "000000000000111",
        _ => "000000000000000",
    }
}

pub fn text_width(s: &str) -> usize {
    let n = s.chars().count();
    if n == 0 {
        0
    } else {
        n * (GLYPH_W + 1) - 1
    }
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgb: vec![BACKGROUND; width * height * 3],
        }
    }

    fn blit(&mut self, tile: &Tile, x0: usize, y0: usize) {
        for y in 0..tile.height {
            let src = &tile.rgb[y * tile.width * 3..(y + 1) * tile.width * 3];
            let off = ((y0 + y) * self.width + x0) * 3;
            self.rgb[off..off + src.len()].copy_from_slice(src);
        }
    }

    fn text(&mut self, s: &str, x0: usize, y0: usize) {
        for (i, c) in s.chars().enumerate() {
            let g = glyph(c).as_bytes();
            for gy in 0..GLYPH_H {
                for gx in 0..GLYPH_W {
                    if g[gy * GLYPH_W + gx] == b'1' {
                        let (x, y) = (x0 + i * (GLYPH_W + 1) + gx, y0 + gy);
                        if x < self.width && y < self.height {
                            let off = (y * self.width + x) * 3;
                            self.rgb[off..off + 3].copy_from_slice(&INK);
                        }
                    }
                }
            }
        }
    }
}

/// A labelled grid of equally sized tiles.
#[derive(Clone, Debug)]
pub struct Sheet {
    pub col_labels: Vec<String>,
    pub rows: Vec<(String, Vec<Tile>)>,
}

/// Pixel layout of a composed sheet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub width: usize,
    pub height: usize,
    pub tile: (usize, usize),
    pub origin: (usize, usize),
}

impl Layout {
    /// Top-left pixel of tile (row, col).
    pub fn tile_origin(&self, row: usize, col: usize) -> (usize, usize) {
        (
            self.origin.0 + col * (self.tile.0 + GAP),
            self.origin.1 + row * (self.tile.1 + GAP),
        )
    }
}

impl Sheet {
    pub fn layout(&self) -> Result<Layout> {
        let first = self
            .rows
            .first()
            .and_then(|(_, t)| t.first())
            .ok_or_else(|| config_err("grid needs at least one tile"))?;
        let (tw, th) = (first.width, first.height);
        let cols = self.col_labels.len();
        for (label, tiles) in &self.rows {
            if tiles.len() != cols {
                return Err(config_err(format!("row {label} has {} tiles, expected {cols}", tiles.len())));
            }
            if tiles.iter().any(|t| t.width != tw || t.height != th || t.rgb.len() != tw * th * 3) {
                return Err(config_err(format!("row {label} has tiles of mismatched size")));
            }
        }
        let label_w = self.rows.iter().map(|(l, _)| text_width(l)).max().unwrap_or(0);
        let origin = (GAP + label_w + GAP, GAP + GLYPH_H + GAP);
        Ok(Layout {
            width: origin.0 + cols * (tw + GAP),
            height: origin.1 + self.rows.len() * (th + GAP),
            tile: (tw, th),
            origin,
        })
    }

    /// Renders to (layout, RGB bytes).
    pub fn compose(&self) -> Result<(Layout, Vec<u8>)> {
        let layout = self.layout()?;
        let mut canvas = Canvas::new(layout.width, layout.height);
        for (c, label) in self.col_labels.iter().enumerate() {
            let (x, _) = layout.tile_origin(0, c);
            let centre = x + layout.tile.0 / 2;
            canvas.text(label, centre.saturating_sub(text_width(label) / 2), GAP);
        }
        for (r, (label, tiles)) in self.rows.iter().enumerate() {
            let (_, y) = layout.tile_origin(r, 0);
            canvas.text(label, GAP, y + layout.tile.1 / 2 - GLYPH_H / 2);
            for (c, t) in tiles.iter().enumerate() {
                let (x, y) = layout.tile_origin(r, c);
                canvas.blit(t, x, y);
            }
        }
        Ok((layout, canvas.rgb))
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let (l, rgb) = self.compose()?;
        Ok(encode_png(l.width as u32, l.height as u32, &rgb)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let png = self.to_png()?;
        if let Some(p) = path.parent() {
            std::fs::create_dir_all(p)?;
        }
        std::fs::write(path, png)?;
        Ok(())
    }
}

/// Column label for an edit strength.
pub fn alpha_label(alpha: f64) -> String {
    if alpha > 0.0 {
        format!("+{alpha}")
    } else {
        format!("{alpha}")
    }
}
