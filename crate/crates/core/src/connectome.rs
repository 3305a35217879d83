//! Functional connectivity from regional time series, plus the on-disk
//! cohort format.
//!
//! A cohort directory holds `manifest.json` and one CSV per subject:
//!
//! ```text
//! cohort/
//!   manifest.json      {"format_version":1,"regions":V,"subjects":[{"subject_id","label","signal_file"}]}
//!   sub-000.csv        T rows × V columns, comma-separated, no header
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const COHORT_FORMAT_VERSION: u32 = 1;

/// One subject's regional signals, stored region-major (`V` rows of `T` samples).
#[derive(Clone, Debug, PartialEq)]
pub struct BoldRecording {
    pub subject_id: String,
    pub label: String,
    regions: usize,
    timepoints: usize,
    signal: Vec<f64>,
}

impl BoldRecording {
    /// Validates shape (`V ≥ 2`, `T ≥ 3`), finiteness and per-region variance.
    pub fn new(subject_id: impl Into<String>, label: impl Into<String>, regions: Vec<Vec<f64>>) -> Result<Self> {
        let subject_id = subject_id.into();
        let v = regions.len();
        let t = regions.first().map_or(0, Vec::len);
        if v < 2 || t < 3 {
            return Err(Error::Input(format!(
                "subject {subject_id}: need at least 2 regions and 3 timepoints, got {v}×{t}"
            )));
        }
        let mut signal = Vec::with_capacity(v * t);
        for (r, series) in regions.iter().enumerate() {
            if series.len() != t {
                return Err(Error::Input(format!(
                    "subject {subject_id}: region {r} has {} samples, expected {t}",
                    series.len()
                )));
            }
            if series.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!(
                    "subject {subject_id}: region {r} contains a non-finite sample"
                )));
            }
            signal.extend_from_slice(series);
        }
        let rec = Self {
            subject_id,
            label: label.into(),
            regions: v,
            timepoints: t,
            signal,
        };
        for r in 0..v {
            let (_, sd) = moments(rec.region(r));
            if sd == 0.0 {
                return Err(Error::DegenerateInput(format!(
                    "subject {}: region {r} has zero temporal variance",
                    rec.subject_id
                )));
            }
        }
        Ok(rec)
    }

    pub fn regions(&self) -> usize {
        self.regions
    }

    pub fn timepoints(&self) -> usize {
        self.timepoints
    }

    pub fn region(&self, r: usize) -> &[f64] {
        &self.signal[r * self.timepoints..(r + 1) * self.timepoints]
    }
}

/// Symmetric `V×V` Pearson correlation matrix with unit diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectivityMatrix {
    pub subject_id: String,
    pub label: String,
    size: usize,
    values: Vec<f64>,
}

impl ConnectivityMatrix {
    /// Wraps raw values, checking the symmetry / diagonal / range invariants.
    pub fn from_values(subject_id: impl Into<String>, label: impl Into<String>, size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(Error::dim("connectivity", &[size, size], &[values.len()]));
        }
        let m = Self {
            subject_id: subject_id.into(),
            label: label.into(),
            size,
            values,
        };
        if let Some(msg) = m.invariant_violation() {
            return Err(Error::Input(format!("subject {}: {msg}", m.subject_id)));
        }
        Ok(m)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.size, self.size], self.values.clone()).expect("square")
    }

    /// Describes the first broken invariant, if any.
    pub fn invariant_violation(&self) -> Option<String> {
        let n = self.size;
        for i in 0..n {
            if self.get(i, i) != 1.0 {
                return Some(format!("diagonal entry {i} is {}", self.get(i, i)));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !(-1.0..=1.0).contains(&v) {
                    return Some(format!("entry ({i},{j}) = {v} outside [-1,1]"));
                }
                if (v - self.get(j, i)).abs() > 1e-12 {
                    return Some(format!("entry ({i},{j}) not symmetric"));
                }
            }
        }
        None
    }
}

/// Population mean and standard deviation.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation between every pair of regions, using population
/// (1/T) moments. The upper triangle is computed and mirrored.
pub fn pearson_fc(rec: &BoldRecording) -> Result<ConnectivityMatrix> {
    let v = rec.regions();
    let t = rec.timepoints() as f64;
    let mut centered = Vec::with_capacity(v);
    let mut sds = Vec::with_capacity(v);
    for r in 0..v {
        let series = rec.region(r);
        let (mean, sd) = moments(series);
        if sd == 0.0 || !sd.is_finite() {
            return Err(Error::DegenerateInput(format!(
                "subject {}: region {r} has zero temporal variance",
                rec.subject_id
            )));
        }
        centered.push(series.iter().map(|x| x - mean).collect::<Vec<_>>());
        sds.push(sd);
    }
    let mut values = vec![0.0; v * v];
    for i in 0..v {
        values[i * v + i] = 1.0;
        for j in (i + 1)..v {
            let cov = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / t;
            let r = (cov / (sds[i] * sds[j])).clamp(-1.0, 1.0);
            values[i * v + j] = r;
            values[j * v + i] = r;
        }
    }
    Ok(ConnectivityMatrix {
        subject_id: rec.subject_id.clone(),
        label: rec.label.clone(),
        size: v,
        values,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CohortManifest {
    pub format_version: u32,
    pub regions: usize,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub label: String,
    pub signal_file: String,
}

/// Reads a cohort directory. Every subject must share one region count.
pub fn load_cohort(dir: &Path) -> Result<Vec<BoldRecording>> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CohortManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(manifest_path.display().to_string(), e.to_string()))?;
    if manifest.format_version != COHORT_FORMAT_VERSION {
        return Err(Error::format(
            "manifest.format_version",
            format!(
                "unsupported version {} (expected {COHORT_FORMAT_VERSION})",
                manifest.format_version
            ),
        ));
    }
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let path = dir.join(&entry.signal_file);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let rows = parse_signal_csv(&text, &path.display().to_string())?;
        let width = rows.first().map_or(0, Vec::len);
        if width != manifest.regions {
            return Err(Error::format(
                path.display().to_string(),
                format!(
                    "subject {} has {width} regions, cohort declares {}",
                    entry.subject_id, manifest.regions
                ),
            ));
        }
        // CSV is time-major; recordings are region-major.
        let regions = (0..width)
            .map(|r| rows.iter().map(|row| row[r]).collect())
            .collect();
        let rec = BoldRecording::new(&entry.subject_id, &entry.label, regions)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn parse_signal_csv(text: &str, context: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|field| field.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("{context}:{}", lineno + 1), e.to_string()))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    format!("{context}:{}", lineno + 1),
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::format(context, "no samples"));
    }
    Ok(rows)
}

/// Writes recordings in the cohort directory format.
pub fn write_cohort(dir: &Path, recordings: &[BoldRecording]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let regions = recordings.first().map_or(0, BoldRecording::regions);
    let mut subjects = Vec::with_capacity(recordings.len());
    for rec in recordings {
        if rec.regions() != regions {
            return Err(Error::Input(format!(
                "subject {} has {} regions, expected {regions}",
                rec.subject_id,
                rec.regions()
            )));
        }
        let file = format!("{}.csv", rec.subject_id);
        let mut csv = String::new();
        for t in 0..rec.timepoints() {
            let row: Vec<String> = (0..regions)
                .map(|r| rec.region(r)[t].to_string())
                .collect();
            csv.push_str(&row.join(","));
            csv.push('\n');
        }
        let path = dir.join(&file);
        fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        subjects.push(SubjectEntry {
            subject_id: rec.subject_id.clone(),
            label: rec.label.clone(),
            signal_file: file,
        });
    }
    let manifest = CohortManifest {
        format_version: COHORT_FORMAT_VERSION,
        regions,
        subjects,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(regions: Vec<Vec<f64>>) -> BoldRecording {
        BoldRecording::new("s", "0", regions).unwrap()
    }

    /// Straight double loop over the textbook formula.
    fn oracle(regions: &[Vec<f64>]) -> Vec<f64> {
        let v = regions.len();
        let t = regions[0].len() as f64;
        let mean = |x: &[f64]| x.iter().sum::<f64>() / t;
        let mut out = vec![0.0; v * v];
        for i in 0..v {
            for j in 0..v {
                let (mi, mj) = (mean(&regions[i]), mean(&regions[j]));
                let mut cov = 0.0;
                let mut vi = 0.0;
                let mut vj = 0.0;
                for k in 0..regions[i].len() {
                    cov += (regions[i][k] - mi) * (regions[j][k] - mj);
                    vi += (regions[i][k] - mi).powi(2);
                    vj += (regions[j][k] - mj).powi(2);
                }
                out[i * v + j] = (cov / t) / ((vi / t).sqrt() * (vj / t).sqrt());
            }
        }
        out
    }

    #[test]
    fn duplicated_and_negated_regions() {
        let a = vec![0.3, 1.7, -0.4, 2.2, 0.9];
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        let fc = pearson_fc(&rec(vec![a.clone(), a, neg])).unwrap();
        assert!((fc.get(0, 1) - 1.0).abs() < 1e-12);
        assert!((fc.get(0, 2) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let regions: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..20).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let fc = pearson_fc(&rec(regions.clone())).unwrap();
        let expected = oracle(&regions);
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    assert!((fc.get(i, j) - expected[i * 5 + j]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn zero_variance_region_is_rejected() {
        let err = BoldRecording::new("s", "0", vec![vec![1.0, 2.0, 3.0], vec![4.0, 4.0, 4.0]])
            .unwrap_err();
        match err {
            Error::DegenerateInput(msg) => assert!(msg.contains("region 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_short_recordings_are_rejected() {
        assert!(BoldRecording::new("s", "0", vec![vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(BoldRecording::new("s", "0", vec![vec![1.0, 2.0, 3.0]]).is_err());
    }

    #[test]
    fn cohort_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let a = rec(vec![vec![0.1, 0.5, -0.3, 0.25], vec![1.0, -1.0, 0.5, 0.125]]);
        let mut b = a.clone();
        b.subject_id = "t".into();
        write_cohort(dir.path(), &[a.clone(), b]).unwrap();
        let back = load_cohort(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], a);

        fs::write(dir.path().join("t.csv"), "1,2\n3,x\n5,6\n").unwrap();
        match load_cohort(dir.path()).unwrap_err() {
            Error::Format { context, .. } => assert!(context.ends_with(":2"), "{context}"),
            other => panic!("unexpected {other:?}"),
        }

        fs::write(dir.path().join("t.csv"), "1,2,3\n3,4,5\n5,6,8\n").unwrap();
        assert!(matches!(
            load_cohort(dir.path()).unwrap_err(),
            Error::Format { .. }
        ));
    }

    fn signals() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (2usize..6, 3usize..25).prop_flat_map(|(v, t)| {
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, t), v)
        })
    }

    proptest! {
        #[test]
        fn output_satisfies_invariants(regions in signals()) {
            prop_assume!(regions.iter().all(|r| moments(r).1 > 1e-6));
            let fc = pearson_fc(&rec(regions)).unwrap();
            prop_assert!(fc.invariant_violation().is_none());
        }

        #[test]
        fn invariant_to_positive_affine_rescaling(
            regions in signals(),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            prop_assume!(regions.iter().all(|r| moments(r).1 > 1e-3));
            let rescaled: Vec<Vec<f64>> = regions
                .iter()
                .map(|r| r.iter().map(|x| scale * x + shift).collect())
                .collect();
            let a = pearson_fc(&rec(regions)).unwrap();
            let b = pearson_fc(&rec(rescaled)).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
