use std::fmt::Write as _;
use std::path::Path;

use super::embed::EmbeddingTable;
use crate::dataio::Condition;
use crate::error::{Error, Result};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Projects rows onto their first two principal components, found by power
/// iteration with deflation on the covariance matrix.
pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::InvalidInput("PCA needs at least two rows".into()));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("PCA rows must share a non-zero width".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centered: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for k in 0..2.min(d) {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + ((i * 7 + k * 13) % 11) as f64 / 11.0).collect();
        let mut lambda = 0.0;
        for _ in 0..500 {
            let mut w: Vec<f64> = (0..d).map(|i| cov[i].iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            for a in &axes {
                let dot: f64 = w.iter().zip(a).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(a).for_each(|(x, y)| *x -= dot * y);
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            w.iter_mut().for_each(|x| *x /= norm);
            let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = w;
            if (norm - lambda).abs() < 1e-12 * norm.max(1.0) && delta < 1e-10 {
                break;
            }
            lambda = norm;
        }
        axes.push(v);
    }
    Ok(centered
        .iter()
        .map(|r| {
            let p = |k: usize| axes.get(k).map_or(0.0, |a| r.iter().zip(a).map(|(x, y)| x * y).sum());
            [p(0), p(1)]
        })
        .collect())
}

/// Scatter plot as standalone SVG: one colour per group, crosses for anomalies.
pub fn scatter_svg(points: &[[f64; 2]], groups: &[String], anomalous: &[bool], title: &str) -> String {
    let (w, h, pad) = (640.0, 480.0, 40.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in points {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let sx = if x1 > x0 { (w - 2.0 * pad) / (x1 - x0) } else { 1.0 };
    let sy = if y1 > y0 { (h - 2.0 * pad) / (y1 - y0) } else { 1.0 };
    let mut names: Vec<&String> = groups.iter().collect();
    names.sort();
    names.dedup();
    let colour = |g: &String| PALETTE[names.iter().position(|n| *n == g).unwrap_or(0) % PALETTE.len()];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for ((p, g), &bad) in points.iter().zip(groups).zip(anomalous) {
        let cx = pad + (p[0] - x0) * sx;
        let cy = h - pad - (p[1] - y0) * sy;
        let c = colour(g);
        if bad {
            let _ = writeln!(
                s,
                r#"<path d="M{:.1} {:.1}l6 6m0 -6l-6 6" stroke="{c}" stroke-width="1.5"/>"#,
                cx - 3.0,
                cy - 3.0
            );
        } else {
            let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{cy:.1}" r="3" fill="{c}" fill-opacity="0.8"/>"#);
        }
    }
    for (i, n) in names.iter().enumerate() {
        let y = 44.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{y}" r="4" fill="{}"/>"#, w - 150.0, colour(n));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - 140.0,
            y + 4.0,
            escape(n)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes the PCA scatter of an embedding table as SVG plus the 2-D
/// coordinates as CSV.
pub fn write_scatter(table: &EmbeddingTable, svg: &Path, coords: &Path, title: &str) -> Result<Vec<[f64; 2]>> {
    let points = pca_2d(&table.vectors)?;
    let groups: Vec<String> = table
        .machine_types
        .iter()
        .zip(&table.machine_ids)
        .map(|(t, i)| format!("{t}/id_{i}"))
        .collect();
    let anomalous: Vec<bool> = table.conditions.iter().map(|c| *c == Condition::Anomaly).collect();
    std::fs::write(svg, scatter_svg(&points, &groups, &anomalous, title)).map_err(|e| Error::io(svg, e))?;
    let mut w = csv::Writer::from_path(coords)?;
    w.write_record(["pc1", "pc2", "machine_type", "machine_id", "condition"])?;
    for (i, p) in points.iter().enumerate() {
        w.write_record([
            format!("{:?}", p[0]),
            format!("{:?}", p[1]),
            table.machine_types[i].clone(),
            table.machine_ids[i].clone(),
            table.conditions[i].as_str().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(coords, e))?;
    Ok(points)
}
