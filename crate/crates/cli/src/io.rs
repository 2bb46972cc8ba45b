use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bpgwsp_core::pgw::TteDataset;
use serde::{Deserialize, Serialize};

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create directory {}", dir.display()))?;
    let name = path
        .file_name()
        .with_context(|| format!("not a file path: {}", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("cannot write {}", tmp.display()))?;
        f.write_all(bytes)
            .with_context(|| format!("cannot write {}", tmp.display()))?;
        f.sync_all().ok();
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Reads a `time,event` CSV. An `id` column is ignored; any other column is
/// an error. Without `censor`, the horizon is the largest censored time.
pub fn read_dataset(path: &Path, censor: Option<f64>) -> Result<TteDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open dataset {}", path.display()))?;
    let headers = reader
        .headers()
        .with_context(|| format!("{}: cannot read header", path.display()))?
        .clone();
    let mut time_col = None;
    let mut event_col = None;
    for (i, h) in headers.iter().enumerate() {
        match h.to_ascii_lowercase().as_str() {
            "time" => time_col = Some(i),
            "event" => event_col = Some(i),
            "id" => {}
            other => bail!("{}: unexpected column `{other}`", path.display()),
        }
    }
    let (Some(tc), Some(ec)) = (time_col, event_col) else {
        bail!("{}: header must contain `time` and `event`", path.display());
    };

    let mut times = Vec::new();
    let mut events = Vec::new();
    for row in reader.records() {
        let row = row.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let t: f64 = field(tc)
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite() && *t > 0.0)
            .with_context(|| {
                format!(
                    "{}:{line}: time must be a positive number, got `{}`",
                    path.display(),
                    field(tc)
                )
            })?;
        let d = match field(ec) {
            "0" => false,
            "1" => true,
            other => bail!("{}:{line}: event must be 0 or 1, got `{other}`", path.display()),
        };
        times.push(t);
        events.push(d);
    }
    if times.is_empty() {
        bail!("{}: dataset has no records", path.display());
    }

    let horizon = match censor {
        Some(c) => c,
        None => {
            let censored = times
                .iter()
                .zip(&events)
                .filter(|(_, d)| !**d)
                .map(|(t, _)| *t)
                .fold(f64::NEG_INFINITY, f64::max);
            if censored.is_finite() {
                censored
            } else {
                times.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            }
        }
    };
    if let Some((i, t)) = times.iter().enumerate().find(|(_, t)| **t > horizon) {
        bail!(
            "{}: record {} has time {t} beyond the censoring horizon {horizon}; pass --censor",
            path.display(),
            i + 1
        );
    }
    Ok(TteDataset::new(times, events, horizon)?)
}

pub fn dataset_csv(data: &TteDataset) -> String {
    let mut out = String::with_capacity(16 * data.len() + 16);
    out.push_str("time,event\n");
    for (t, d) in data.records() {
        out.push_str(&format!("{t},{}\n", u8::from(d)));
    }
    out
}

/// Event counts over equal-width bins of `(0, censor]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const HISTOGRAM_BINS: usize = 20;

impl Histogram {
    pub fn of_events(data: &TteDataset, bins: usize) -> Self {
        let width = data.censor_time() / bins as f64;
        let mut counts = vec![0; bins];
        for t in data.event_times() {
            let i = ((t / width).ceil() as usize).clamp(1, bins) - 1;
            counts[i] += 1;
        }
        Histogram {
            edges: (0..=bins).map(|i| i as f64 * width).collect(),
            counts,
        }
    }
}

/// Size, events and horizon of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub records: usize,
    pub events: usize,
    pub censor_time: f64,
    pub mean_event_time: Option<f64>,
}

impl DataSummary {
    pub fn of(data: &TteDataset) -> Self {
        let ev = data.event_times();
        DataSummary {
            records: data.len(),
            events: ev.len(),
            censor_time: data.censor_time(),
            mean_event_time: (!ev.is_empty()).then(|| ev.iter().sum::<f64>() / ev.len() as f64),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn parses_and_infers_censoring() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "id,time,event\n1,3.5,1\n2,21,0\n3,10,1\n");
        let d = read_dataset(&p, None).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.censor_time(), 21.0);
        assert_eq!(d.event_count(), 2);

        let round = write(dir.path(), "b.csv", &dataset_csv(&d));
        assert_eq!(read_dataset(&round, None).unwrap(), d);
    }

    #[test]
    fn reports_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.csv", "time,event\n1,1\n2,7\n");
        let msg = format!("{:#}", read_dataset(&p, None).unwrap_err());
        assert!(msg.contains(":3:"), "{msg}");
        let p = write(dir.path(), "neg.csv", "time,event\n-1,1\n");
        assert!(format!("{:#}", read_dataset(&p, None).unwrap_err()).contains(":2:"));
        let p = write(dir.path(), "empty.csv", "time,event\n");
        assert!(read_dataset(&p, None).is_err());
        let p = write(dir.path(), "nothing.csv", "");
        assert!(read_dataset(&p, None).is_err());
        let p = write(dir.path(), "extra.csv", "time,event,dose\n1,1,3\n");
        assert!(read_dataset(&p, None).is_err());
    }

    #[test]
    fn censor_override_is_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", "time,event\n30,1\n20,0\n");
        assert!(read_dataset(&p, None).is_err());
        assert_eq!(read_dataset(&p, Some(30.0)).unwrap().censor_time(), 30.0);
    }

    #[test]
    fn histogram_bins() {
        let d = TteDataset::new(
            vec![0.5, 1.0, 1.01, 20.0, 20.0],
            vec![true, true, true, true, false],
            20.0,
        )
        .unwrap();
        let h = Histogram::of_events(&d, 20);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[19], 1);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.edges.len(), 21);
    }
}
