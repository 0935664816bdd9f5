//! PNG heatmaps of grid fields with annotated axes.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use bifent::Rect;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    /// `log10` of positive values; zero and negative cells get the bottom colour.
    Log,
}

/// A row-major field over `region`, row 0 at `im_min`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field<'a> {
    pub values: &'a [f64],
    pub nx: usize,
    pub ny: usize,
    pub region: Rect,
}

#[derive(Debug, thiserror::Error)]
pub enum HeatmapError {
    #[error("field is empty or has no finite values")]
    EmptyField,
    #[error("field has {got} values, expected {nx}×{ny}")]
    Shape { got: usize, nx: usize, ny: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Png(#[from] png::EncodingError),
}

const MARGIN_LEFT: usize = 44;
const MARGIN_BOTTOM: usize = 22;
const MARGIN_TOP: usize = 8;
const MARGIN_RIGHT: usize = 12;
const TICKS: usize = 5;
const BACKGROUND: [u8; 3] = [255, 255, 255];
const MISSING: [u8; 3] = [128, 128, 128];
const INK: [u8; 3] = [0, 0, 0];

const VIRIDIS: [[f64; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

fn palette(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let mut c = [0u8; 3];
    for k in 0..3 {
        c[k] = (VIRIDIS[i][k] + f * (VIRIDIS[i + 1][k] - VIRIDIS[i][k])).round() as u8;
    }
    c
}

/// 3×5 glyphs, one bit per pixel, rows top to bottom.
fn glyph(ch: char) -> Option<[u8; 5]> {
    Some(match ch {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        _ => return None,
    })
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

struct Canvas {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            rgb: BACKGROUND.repeat(width * height),
        }
    }

    fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let k = 3 * (y * self.width + x);
            self.rgb[k..k + 3].copy_from_slice(&c);
        }
    }

    fn text(&mut self, x: usize, y: usize, s: &str) {
        for (i, ch) in s.chars().enumerate() {
            if let Some(rows) = glyph(ch) {
                for (dy, bits) in rows.iter().enumerate() {
                    for dx in 0..3 {
                        if bits >> (2 - dx) & 1 == 1 {
                            self.set(x + 4 * i + dx, y + dy, INK);
                        }
                    }
                }
            }
        }
    }
}

/// Maps finite values to `[0, 1]`; a constant field maps to 0.
fn normalize(values: &[f64], scale: Scale) -> Result<Vec<Option<f64>>, HeatmapError> {
    let mapped: Vec<Option<f64>> = values
        .iter()
        .map(|&v| match scale {
            Scale::Linear => v.is_finite().then_some(v),
            Scale::Log if v.is_finite() => Some(if v > 0.0 {
                v.log10()
            } else {
                f64::NEG_INFINITY
            }),
            Scale::Log => None,
        })
        .collect();
    let finite = mapped.iter().flatten().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if lo > hi {
        return Err(HeatmapError::EmptyField);
    }
    Ok(mapped
        .into_iter()
        .map(|v| {
            v.map(|v| {
                if !v.is_finite() || hi == lo {
                    0.0
                } else {
                    (v - lo) / (hi - lo)
                }
            })
        })
        .collect())
}

/// Renders `field` to an RGB PNG at `path`. Each cell becomes a square of
/// pixels; tick labels give region coordinates. `text` entries are stored
/// as PNG tEXt chunks.
pub fn render_heatmap(
    field: &Field<'_>,
    scale: Scale,
    path: &Path,
    text: &[(String, String)],
) -> Result<(), HeatmapError> {
    let image = rasterize(field, scale)?;
    let file = BufWriter::new(File::create(path)?);
    let mut encoder = png::Encoder::new(file, image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        encoder.add_text_chunk(k.clone(), v.clone())?;
    }
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&image.rgb)?;
    writer.finish()?;
    Ok(())
}

fn rasterize(field: &Field<'_>, scale: Scale) -> Result<Canvas, HeatmapError> {
    if field.values.len() != field.nx * field.ny {
        return Err(HeatmapError::Shape {
            got: field.values.len(),
            nx: field.nx,
            ny: field.ny,
        });
    }
    if field.values.is_empty() {
        return Err(HeatmapError::EmptyField);
    }
    let t = normalize(field.values, scale)?;
    let px = (480 / field.nx).max(1);
    let (pw, ph) = (field.nx * px, field.ny * px);
    let mut canvas = Canvas::new(
        MARGIN_LEFT + pw + MARGIN_RIGHT,
        MARGIN_TOP + ph + MARGIN_BOTTOM,
    );
    for row in 0..field.ny {
        for col in 0..field.nx {
            let c = t[row * field.nx + col].map_or(MISSING, palette);
            let y0 = MARGIN_TOP + (field.ny - 1 - row) * px;
            for dy in 0..px {
                for dx in 0..px {
                    canvas.set(MARGIN_LEFT + col * px + dx, y0 + dy, c);
                }
            }
        }
    }
    let (x_axis, y_axis) = (MARGIN_TOP + ph, MARGIN_LEFT - 1);
    for x in y_axis..MARGIN_LEFT + pw {
        canvas.set(x, x_axis, INK);
    }
    for y in MARGIN_TOP..=x_axis {
        canvas.set(y_axis, y, INK);
    }
    let r = field.region;
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let x = MARGIN_LEFT + ((pw - 1) as f64 * f).round() as usize;
        for dy in 1..4 {
            canvas.set(x, x_axis + dy, INK);
        }
        let label = tick_label(r.re_min + f * r.width());
        let lx = x
            .saturating_sub(2 * label.len())
            .min(canvas.width - 4 * label.len());
        canvas.text(lx, x_axis + 6, &label);

        let y = MARGIN_TOP + ((ph - 1) as f64 * (1.0 - f)).round() as usize;
        for dx in 1..4 {
            canvas.set(y_axis - dx, y, INK);
        }
        let label = tick_label(r.im_min + f * r.height());
        let ly = y.saturating_sub(2).min(canvas.height - 5);
        canvas.text(y_axis.saturating_sub(5 + 4 * label.len()), ly, &label);
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn region() -> Rect {
        Rect::new(-2.5, 1.5, -1.5, 1.5).unwrap()
    }

    fn plot_colours(c: &Canvas, nx: usize, ny: usize) -> HashSet<[u8; 3]> {
        let px = (480 / nx).max(1);
        let mut set = HashSet::new();
        for y in MARGIN_TOP..MARGIN_TOP + ny * px {
            for x in MARGIN_LEFT..MARGIN_LEFT + nx * px {
                let k = 3 * (y * c.width + x);
                set.insert([c.rgb[k], c.rgb[k + 1], c.rgb[k + 2]]);
            }
        }
        set
    }

    #[test]
    fn constant_field_is_one_colour() {
        let v = vec![3.5; 40 * 30];
        let f = Field {
            values: &v,
            nx: 40,
            ny: 30,
            region: region(),
        };
        for s in [Scale::Linear, Scale::Log] {
            let c = rasterize(&f, s).unwrap();
            assert_eq!(plot_colours(&c, 40, 30).len(), 1);
        }
    }

    #[test]
    fn empty_field_is_an_error() {
        let f = Field {
            values: &[],
            nx: 0,
            ny: 0,
            region: region(),
        };
        assert!(matches!(
            rasterize(&f, Scale::Linear),
            Err(HeatmapError::EmptyField)
        ));
        let v = vec![f64::NAN; 4];
        let f = Field {
            values: &v,
            nx: 2,
            ny: 2,
            region: region(),
        };
        assert!(matches!(
            rasterize(&f, Scale::Linear),
            Err(HeatmapError::EmptyField)
        ));
        let v = vec![0.0; 4];
        let f = Field {
            values: &v,
            nx: 2,
            ny: 2,
            region: region(),
        };
        assert!(matches!(
            rasterize(&f, Scale::Log),
            Err(HeatmapError::EmptyField)
        ));
    }

    #[test]
    fn orientation_and_extremes() {
        // Bottom row small, top row large.
        let v = vec![0.0, 0.0, 1.0, 1.0];
        let f = Field {
            values: &v,
            nx: 2,
            ny: 2,
            region: region(),
        };
        let c = rasterize(&f, Scale::Linear).unwrap();
        let at = |x: usize, y: usize| {
            let k = 3 * (y * c.width + x);
            [c.rgb[k], c.rgb[k + 1], c.rgb[k + 2]]
        };
        assert_eq!(at(MARGIN_LEFT, MARGIN_TOP), palette(1.0));
        assert_eq!(at(MARGIN_LEFT, MARGIN_TOP + 479), palette(0.0));
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(-2.5), "-2.5");
        assert_eq!(tick_label(1.0), "1");
        assert_eq!(tick_label(-0.0001), "0");
        assert_eq!(tick_label(0.25), "0.25");
        assert!(tick_label(-1.75).chars().all(|c| glyph(c).is_some()));
    }

    #[test]
    fn writes_png_with_text_chunks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.png");
        let v: Vec<f64> = (0..64 * 48).map(|k| k as f64).collect();
        let f = Field {
            values: &v,
            nx: 64,
            ny: 48,
            region: region(),
        };
        render_heatmap(
            &f,
            Scale::Log,
            &path,
            &[("config-hash".into(), "abc".into())],
        )
        .unwrap();
        let decoder = png::Decoder::new(File::open(&path).unwrap());
        let reader = decoder.read_info().unwrap();
        let info = reader.info();
        assert!(info
            .uncompressed_latin1_text
            .iter()
            .any(|t| t.keyword == "config-hash" && t.text == "abc"));
        assert_eq!(info.width as usize, MARGIN_LEFT + 64 * 7 + MARGIN_RIGHT);
    }
}
