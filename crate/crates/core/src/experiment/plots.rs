//! Figure exports: LDA scatter (TSV + SVG) and spectrogram images (PNG).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::audio::AudioClip;
use crate::corpus::Quality;
use crate::dsp::{spectrogram, SpectrogramConfig};
use crate::error::{Error, Result};

/// Dynamic range shown in spectrogram images.
pub const SPECTROGRAM_RANGE_DB: f64 = 80.0;

const PALETTE: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub id: String,
    pub label: String,
    pub values: Vec<f64>,
}

fn color_for(label: &str, labels: &[&str]) -> &'static str {
    if let Ok(q) = label.parse::<Quality>() {
        return PALETTE[q.index()];
    }
    let i = labels.iter().position(|l| *l == label).unwrap_or(0);
    PALETTE[i % PALETTE.len()]
}

/// Writes `<stem>.tsv` (dim1, dim2, label, id) and `<stem>.svg`.
pub fn export_lda_scatter(points: &[ScatterPoint], dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    if let Some(p) = points.iter().find(|p| p.values.len() < 2) {
        return Err(Error::Config(format!(
            "scatter needs at least two LDA dimensions, {} has {}",
            p.id,
            p.values.len()
        )));
    }
    let mut tsv = String::from("dim1\tdim2\tlabel\tid\n");
    for p in points {
        let _ = writeln!(tsv, "{:e}\t{:e}\t{}\t{}", p.values[0], p.values[1], p.label, p.id);
    }
    let tsv_path = dir.join(format!("{stem}.tsv"));
    std::fs::write(&tsv_path, tsv).map_err(|e| Error::io(&tsv_path, e))?;
    let svg_path = dir.join(format!("{stem}.svg"));
    std::fs::write(&svg_path, scatter_svg(points)).map_err(|e| Error::io(&svg_path, e))?;
    Ok(vec![tsv_path, svg_path])
}

fn scatter_svg(points: &[ScatterPoint]) -> String {
    let (w, h, m) = (480.0, 400.0, 50.0);
    let range = |k: usize| {
        let lo = points.iter().map(|p| p.values[k]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p.values[k]).fold(f64::NEG_INFINITY, f64::max);
        if !(hi - lo > 1e-12) {
            (lo - 1.0, hi + 1.0)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let sx = |v: f64| m + (v - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - y0) / (y1 - y0) * (h - 2.0 * m);
    let mut labels: Vec<&str> = points.iter().map(|p| p.label.as_str()).collect();
    labels.sort();
    labels.dedup();

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">LDA dimension 1</text>"#, w / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">LDA dimension 2</text>"#,
        h / 2.0,
        h / 2.0
    );
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
            sx(p.values[0]),
            sy(p.values[1]),
            color_for(&p.label, &labels),
            p.id
        );
    }
    for (i, l) in labels.iter().enumerate() {
        let y = m + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#, w - m - 80.0, y - 4.0, color_for(l, &labels));
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="11">{l}</text>"#, w - m - 70.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Spectrogram in dB, rows from the highest shown frequency down to 0 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramImage {
    pub width: usize,
    pub height: usize,
    pub db: Vec<f64>,
    pub floor_db: f64,
    pub max_db: f64,
}

impl SpectrogramImage {
    /// Intensities in `[0, 1]` on the shared scale.
    pub fn levels(&self) -> Vec<f64> {
        self.db
            .iter()
            .map(|v| ((v - self.floor_db) / (self.max_db - self.floor_db)).clamp(0.0, 1.0))
            .collect()
    }
}

/// dB images of all clips on one color scale whose floor sits
/// [`SPECTROGRAM_RANGE_DB`] below the loudest bin of any clip.
pub fn render_spectrograms(clips: &[&AudioClip], max_hz: f64) -> Result<Vec<SpectrogramImage>> {
    let cfg = SpectrogramConfig::default();
    let zero_db = 20.0 * cfg.magnitude_floor.log10();
    let specs = clips.iter().map(|c| spectrogram(c, &cfg)).collect::<Result<Vec<_>>>()?;
    let mut images: Vec<SpectrogramImage> = specs
        .iter()
        .map(|s| {
            let bins = ((max_hz / s.bin_hz).floor() as usize + 1).min(s.n_bins);
            let mut db = vec![0.0; bins * s.n_frames];
            for t in 0..s.n_frames {
                let frame = s.frame(t);
                for b in 0..bins {
                    db[(bins - 1 - b) * s.n_frames + t] = 20.0 * frame[b].log10();
                }
            }
            SpectrogramImage {
                width: s.n_frames,
                height: bins,
                db,
                floor_db: 0.0,
                max_db: 0.0,
            }
        })
        .collect();
    let max_db = images
        .iter()
        .flat_map(|i| i.db.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max)
        .max(zero_db);
    let (floor_db, max_db) = if max_db <= zero_db + 1e-9 {
        (zero_db, zero_db + SPECTROGRAM_RANGE_DB)
    } else {
        (max_db - SPECTROGRAM_RANGE_DB, max_db)
    };
    for img in &mut images {
        img.floor_db = floor_db;
        img.max_db = max_db;
        for v in &mut img.db {
            *v = v.max(floor_db);
        }
    }
    Ok(images)
}

fn colormap(level: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.0],
        [0.25, 0.0, 0.45],
        [0.8, 0.15, 0.3],
        [1.0, 0.6, 0.0],
        [1.0, 1.0, 0.8],
    ];
    let x = level.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = ((STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f) * 255.0).round() as u8;
    }
    out
}

/// One PNG per quality, `spectrogram_<speaker>_<quality>.png`, on a shared scale.
pub fn export_spectrograms(
    clips: &[(Quality, AudioClip)],
    dir: &Path,
    speaker: &str,
    max_hz: f64,
) -> Result<Vec<PathBuf>> {
    for q in Quality::ALL {
        if !clips.iter().any(|(c, _)| *c == q) {
            return Err(Error::InsufficientData(format!("no {q} clip for speaker {speaker}")));
        }
    }
    let refs: Vec<&AudioClip> = clips.iter().map(|(_, c)| c).collect();
    let images = render_spectrograms(&refs, max_hz)?;
    let mut out = Vec::new();
    for ((q, _), img) in clips.iter().zip(&images) {
        let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
        for (i, level) in img.levels().into_iter().enumerate() {
            let (x, y) = (i % img.width, i / img.width);
            buf.put_pixel(x as u32, y as u32, image::Rgb(colormap(level)));
        }
        let path = dir.join(format!("spectrogram_{speaker}_{q}.png"));
        buf.save(&path).map_err(|e| Error::format("PNG", format!("{}: {e}", path.display())))?;
        out.push(path);
    }
    Ok(out)
}
