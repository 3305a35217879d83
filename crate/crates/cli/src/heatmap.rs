use std::path::Path;

use image::{Rgb, RgbImage};

use fcadapt::Tensor;

const CELL: u32 = 12;

/// Diverging blue–white–red map over [-1, 1]; values outside are clamped.
fn colour(v: f64) -> Rgb<u8> {
    let t = if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
    if t >= 0.0 {
        Rgb([255, fade(t), fade(t)])
    } else {
        Rgb([fade(t), fade(t), 255])
    }
}

pub fn write_heatmap(matrix: &Tensor, path: &Path) -> anyhow::Result<()> {
    let (rows, cols) = matrix.dims2()?;
    let img = RgbImage::from_fn(cols as u32 * CELL, rows as u32 * CELL, |x, y| {
        colour(matrix.at((y / CELL) as usize, (x / CELL) as usize))
    });
    img.save(path)?;
    Ok(())
}

pub fn write_csv(matrix: &Tensor, path: &Path) -> anyhow::Result<()> {
    let (rows, _) = matrix.dims2()?;
    let mut out = String::new();
    for r in 0..rows {
        let line: Vec<String> = matrix.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| fcadapt::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_endpoints() {
        assert_eq!(colour(1.0), Rgb([255, 0, 0]));
        assert_eq!(colour(-1.0), Rgb([0, 0, 255]));
        assert_eq!(colour(0.0), Rgb([255, 255, 255]));
        assert_eq!(colour(5.0), colour(1.0));
    }
}
