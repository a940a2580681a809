//! Threshold-free evaluation: AUC, partial AUC over a low false-positive
//! range, the per-type minimum AUC, and report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Condition;
use crate::error::{Error, Result};
use crate::scorer::ScoreRecord;
use crate::util::write_atomic;

fn check_scores(normal: &[f64], anomaly: &[f64]) -> Result<()> {
    if normal.is_empty() || anomaly.is_empty() {
        return Err(Error::Metric(format!(
            "need both normal and anomalous scores, got {} and {}",
            normal.len(),
            anomaly.len()
        )));
    }
    if normal.iter().chain(anomaly).any(|s| !s.is_finite()) {
        return Err(Error::Metric("scores must be finite".into()));
    }
    Ok(())
}

/// Mann-Whitney AUC: the fraction of (anomaly, normal) pairs in which the
/// anomaly scores higher, ties counting one half.
pub fn auc(normal: &[f64], anomaly: &[f64]) -> Result<f64> {
    check_scores(normal, anomaly)?;
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(anomaly.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // sum of mid-ranks of the anomalies (1-based)
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        let hits = all[i..j].iter().filter(|x| x.1).count();
        rank_sum += mid * hits as f64;
        i = j;
    }
    let (na, nn) = (anomaly.len() as f64, normal.len() as f64);
    Ok((rank_sum - na * (na + 1.0) / 2.0) / (na * nn))
}

/// Empirical ROC vertices `(fpr, tpr)` from the highest threshold down; a
/// group of tied scores contributes one diagonal segment.
pub fn roc_curve(normal: &[f64], anomaly: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores(normal, anomaly)?;
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(anomaly.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (nn, na) = (normal.len() as f64, anomaly.len() as f64);
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut points = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / nn, tp as f64 / na));
        i = j;
    }
    Ok(points)
}

/// Area under the empirical ROC for FPR in `[0, p]`, divided by `p`.
///
/// The curve is truncated at FPR = p with linear interpolation; no McClish
/// standardization is applied, so `pauc(n, a, 1.0) == auc(n, a)`.
pub fn pauc(normal: &[f64], anomaly: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Metric(format!("pAUC range must satisfy 0 < p <= 1, got {p}")));
    }
    let roc = roc_curve(normal, anomaly)?;
    let mut area = 0.0;
    for w in roc.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= p {
            break;
        }
        if x1 <= p {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_p = y0 + (y1 - y0) * (p - x0) / (x1 - x0);
            area += (p - x0) * (y0 + y_p) / 2.0;
            break;
        }
    }
    Ok(area / p)
}

/// Worst (minimum) per-ID AUC.
pub fn mauc(per_id_aucs: &[f64]) -> Result<f64> {
    per_id_aucs
        .iter()
        .copied()
        .reduce(f64::min)
        .ok_or_else(|| Error::Metric("mAUC of an empty list".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdMetrics {
    pub machine_type: String,
    pub machine_id: String,
    pub auc: f64,
    pub pauc: f64,
    pub normals: usize,
    pub anomalies: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeMetrics {
    pub machine_type: String,
    pub mean_auc: f64,
    pub mean_pauc: f64,
    pub mauc: f64,
    pub ids: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub auc: f64,
    pub pauc: f64,
    pub mauc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub p: f64,
    pub ids: Vec<IdMetrics>,
    pub types: Vec<TypeMetrics>,
    /// Unweighted means over machine types.
    pub average: Averages,
    /// IDs left out of the report and why.
    pub warnings: Vec<String>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Aggregates score records into per-ID, per-type and overall metrics.
/// IDs lacking either condition are skipped with a warning.
pub fn build_report(records: &[ScoreRecord], p: f64) -> Result<MetricsReport> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Metric(format!("pAUC range must satisfy 0 < p <= 1, got {p}")));
    }
    let mut groups: BTreeMap<(&str, &str), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut unlabeled = 0usize;
    for r in records {
        let g = groups.entry((&r.machine_type, &r.machine_id)).or_default();
        match r.condition {
            Condition::Normal => g.0.push(r.score),
            Condition::Anomaly => g.1.push(r.score),
            Condition::Unknown => unlabeled += 1,
        }
    }
    if unlabeled > 0 {
        warnings.push(format!("{unlabeled} records without a ground-truth condition ignored"));
    }
    let mut ids = Vec::new();
    for ((machine_type, machine_id), (normal, anomaly)) in &groups {
        if normal.is_empty() || anomaly.is_empty() {
            let msg = format!(
                "{machine_type}/id_{machine_id} excluded: {} normal and {} anomalous clips",
                normal.len(),
                anomaly.len()
            );
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        ids.push(IdMetrics {
            machine_type: machine_type.to_string(),
            machine_id: machine_id.to_string(),
            auc: auc(normal, anomaly)?,
            pauc: pauc(normal, anomaly, p)?,
            normals: normal.len(),
            anomalies: anomaly.len(),
        });
    }
    if ids.is_empty() {
        return Err(Error::Metric(
            "no machine ID has both normal and anomalous scores".into(),
        ));
    }
    let mut by_type: BTreeMap<&str, Vec<&IdMetrics>> = BTreeMap::new();
    for m in &ids {
        by_type.entry(&m.machine_type).or_default().push(m);
    }
    let types: Vec<TypeMetrics> = by_type
        .iter()
        .map(|(t, ms)| {
            Ok(TypeMetrics {
                machine_type: t.to_string(),
                mean_auc: mean(ms.iter().map(|m| m.auc)),
                mean_pauc: mean(ms.iter().map(|m| m.pauc)),
                mauc: mauc(&ms.iter().map(|m| m.auc).collect::<Vec<_>>())?,
                ids: ms.len(),
            })
        })
        .collect::<Result<_>>()?;
    let average = Averages {
        auc: mean(types.iter().map(|t| t.mean_auc)),
        pauc: mean(types.iter().map(|t| t.mean_pauc)),
        mauc: mean(types.iter().map(|t| t.mauc)),
    };
    Ok(MetricsReport {
        p,
        ids,
        types,
        average,
        warnings,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Long-form CSV: one row per ID, per type and the overall average.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["level", "machine_type", "machine_id", "auc", "pauc", "mauc"])?;
        for m in &self.ids {
            w.write_record([
                "id",
                &m.machine_type,
                &m.machine_id,
                &m.auc.to_string(),
                &m.pauc.to_string(),
                "",
            ])?;
        }
        for t in &self.types {
            w.write_record([
                "type",
                &t.machine_type,
                "",
                &t.mean_auc.to_string(),
                &t.mean_pauc.to_string(),
                &t.mauc.to_string(),
            ])?;
        }
        w.write_record([
            "average",
            "",
            "",
            &self.average.auc.to_string(),
            &self.average.pauc.to_string(),
            &self.average.mauc.to_string(),
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv()?.as_bytes())
    }

    /// Machine types as columns plus an Average column; AUC, pAUC and mAUC
    /// rows, in percent.
    pub fn render_table(&self) -> String {
        let mut header = vec!["Metric".to_string()];
        header.extend(self.types.iter().map(|t| t.machine_type.clone()));
        header.push("Average".into());
        let row = |name: &str, f: &dyn Fn(&TypeMetrics) -> f64, avg: f64| {
            let mut r = vec![name.to_string()];
            r.extend(self.types.iter().map(|t| pct(f(t))));
            r.push(pct(avg));
            r
        };
        let rows = vec![
            header,
            row("AUC (%)", &|t| t.mean_auc, self.average.auc),
            row(&format!("pAUC (%) p={}", self.p), &|t| t.mean_pauc, self.average.pauc),
            row("mAUC (%)", &|t| t.mauc, self.average.mauc),
        ];
        align(&rows)
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (cols.saturating_sub(1));
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

/// Several methods side by side: machine types (plus Average) as rows and an
/// AUC and mAUC column per method. A method without a report shows `-`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<String>,
    pub machine_types: Vec<String>,
    /// `cells[type][method] = (AUC, mAUC)`; the last row is the average.
    pub cells: Vec<Vec<Option<(f64, f64)>>>,
}

impl ComparisonTable {
    pub fn new(methods: &[(String, Option<&MetricsReport>)]) -> Self {
        let mut machine_types: Vec<String> = methods
            .iter()
            .filter_map(|(_, r)| *r)
            .flat_map(|r| r.types.iter().map(|t| t.machine_type.clone()))
            .collect();
        machine_types.sort();
        machine_types.dedup();
        let mut cells: Vec<Vec<Option<(f64, f64)>>> = machine_types
            .iter()
            .map(|t| {
                methods
                    .iter()
                    .map(|(_, r)| {
                        r.and_then(|r| r.types.iter().find(|x| &x.machine_type == t))
                            .map(|x| (x.mean_auc, x.mauc))
                    })
                    .collect()
            })
            .collect();
        cells.push(
            methods
                .iter()
                .map(|(_, r)| r.map(|r| (r.average.auc, r.average.mauc)))
                .collect(),
        );
        Self {
            methods: methods.iter().map(|(m, _)| m.clone()).collect(),
            machine_types,
            cells,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().flatten().all(Option::is_some)
    }

    fn row_names(&self) -> impl Iterator<Item = &str> {
        self.machine_types.iter().map(String::as_str).chain(std::iter::once("Average"))
    }

    pub fn render(&self) -> String {
        let mut rows = Vec::new();
        let mut header = vec!["Machine type".to_string()];
        for m in &self.methods {
            header.push(format!("{m} AUC"));
            header.push(format!("{m} mAUC"));
        }
        rows.push(header);
        for (name, cells) in self.row_names().zip(&self.cells) {
            let mut r = vec![name.to_string()];
            for c in cells {
                match c {
                    Some((a, m)) => {
                        r.push(pct(*a));
                        r.push(pct(*m));
                    }
                    None => {
                        r.push("-".into());
                        r.push("-".into());
                    }
                }
            }
            rows.push(r);
        }
        align(&rows)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["machine_type".to_string()];
        for m in &self.methods {
            header.push(format!("{m}_auc"));
            header.push(format!("{m}_mauc"));
        }
        w.write_record(&header)?;
        for (name, cells) in self.row_names().zip(&self.cells) {
            let mut r = vec![name.to_string()];
            for c in cells {
                match c {
                    Some((a, m)) => {
                        r.push(a.to_string());
                        r.push(m.to_string());
                    }
                    None => {
                        r.push(String::new());
                        r.push(String::new());
                    }
                }
            }
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Metric(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: &str, id: &str, c: Condition, score: f64) -> ScoreRecord {
        ScoreRecord {
            path: format!("{t}/{id}/{score}"),
            machine_type: t.into(),
            machine_id: id.into(),
            condition: c,
            score,
        }
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 2.0], &[0.0, 3.0]).unwrap(), 0.5);
        assert_eq!(auc(&[1.0], &[1.0]).unwrap(), 0.5);
        assert!(auc(&[], &[1.0]).is_err());
        assert!(auc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn pauc_examples() {
        assert_eq!(pauc(&[0.1, 0.2], &[0.8, 0.9], 0.1).unwrap(), 1.0);
        let normals: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(pauc(&normals, &[5.5], 0.1).unwrap(), 0.0);
        assert!(pauc(&[1.0], &[2.0], 0.0).is_err());
        assert!(pauc(&[1.0], &[2.0], 1.5).is_err());
        let n = [0.3, 1.2, 0.7, 0.7, 2.0];
        let a = [0.7, 1.5, 0.1];
        assert!((pauc(&n, &a, 1.0).unwrap() - auc(&n, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn pauc_interpolates_inside_a_tie_segment() {
        // one normal and one anomaly tied at the top: the ROC goes (0,0) -> (0.5,1)
        // for two normals, so at p = 0.25 the TPR is 0.5 and the area is 0.25*0.5/2
        let got = pauc(&[1.0, 0.0], &[1.0], 0.25).unwrap();
        assert!((got - 0.25).abs() < 1e-15, "{got}");
    }

    #[test]
    fn mauc_is_minimum() {
        assert_eq!(mauc(&[0.8, 0.9, 0.7]).unwrap(), 0.7);
        assert_eq!(mauc(&[0.93]).unwrap(), 0.93);
        assert!(mauc(&[]).is_err());
    }

    #[test]
    fn report_aggregates_and_round_trips() {
        let recs = vec![
            rec("fan", "00", Condition::Normal, 0.1),
            rec("fan", "00", Condition::Anomaly, 0.9),
            rec("fan", "02", Condition::Normal, 0.5),
            rec("fan", "02", Condition::Anomaly, 0.5),
            rec("pump", "00", Condition::Normal, 0.2),
            rec("pump", "00", Condition::Anomaly, 0.1),
            rec("pump", "04", Condition::Normal, 0.3),
        ];
        let r = build_report(&recs, 0.1).unwrap();
        assert_eq!(r.ids.len(), 3);
        assert_eq!(r.warnings.len(), 1);
        assert!(r.warnings[0].contains("pump/id_04"));
        let fan = &r.types[0];
        assert_eq!((fan.mean_auc, fan.mauc), (0.75, 0.5));
        assert!(fan.mauc <= fan.mean_auc);
        assert_eq!(r.average.auc, (0.75 + 0.0) / 2.0);
        assert_eq!(MetricsReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        let table = r.render_table();
        assert!(table.contains("Average") && table.contains("75.00") && table.contains("mAUC"));
        assert_eq!(r.to_csv().unwrap().lines().count(), 1 + 3 + 2 + 1);
    }

    #[test]
    fn report_needs_a_complete_id() {
        let recs = vec![rec("fan", "00", Condition::Normal, 0.1)];
        assert!(build_report(&recs, 0.1).is_err());
    }

    #[test]
    fn six_type_average_is_mean_of_type_means() {
        let mut recs = Vec::new();
        let mut means = Vec::new();
        for (k, t) in ["a", "b", "c", "d", "e", "f"].iter().enumerate() {
            // AUC of this type's single ID is k/5 with five normals below/above
            for i in 0..5 {
                recs.push(rec(t, "00", Condition::Normal, if i < k { 0.0 } else { 2.0 }));
            }
            recs.push(rec(t, "00", Condition::Anomaly, 1.0));
            means.push(k as f64 / 5.0);
        }
        let r = build_report(&recs, 0.1).unwrap();
        let want = means.iter().sum::<f64>() / 6.0;
        assert!((r.average.auc - want).abs() < 1e-15);
    }

    #[test]
    fn comparison_table_shape() {
        let recs = vec![
            rec("fan", "00", Condition::Normal, 0.1),
            rec("fan", "00", Condition::Anomaly, 0.9),
        ];
        let r = build_report(&recs, 0.1).unwrap();
        let t = ComparisonTable::new(&[("A".into(), Some(&r)), ("B".into(), None)]);
        assert!(!t.is_complete());
        assert_eq!(t.cells.len(), 2);
        let text = t.render();
        assert!(text.contains("A AUC") && text.contains("B mAUC") && text.contains(" -"));
        let full = ComparisonTable::new(&[("A".into(), Some(&r))]);
        assert!(full.is_complete());
        assert_eq!(full.to_csv().unwrap().lines().count(), 3);
    }
}
