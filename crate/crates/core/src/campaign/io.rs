//! Snapshot files and report export.
//!
//! Snapshot CSV layout: a `#` comment line, a header-name row, one header
//! record (`schema_version,n_samples,carrier_hz,sample_rate_hz,bandwidth_hz,
//! rolloff,n_snapshots,agent_x,agent_y`), a column-name row, then one record
//! per snapshot: `index,anchor_x,anchor_y,aoa,re_0,im_0,...`.
//!
//! The binary alternative is little-endian: the 8-byte magic `EXSNAP01`, the
//! schema version and two counts (`u32`, `u64 n_samples`, `u64 n_snapshots`),
//! six `f64` header values in CSV order, then per snapshot three `f64`
//! (anchor x, y, aoa) followed by `n_samples` interleaved re/im `f64` pairs.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{CampaignError, CampaignReport, GroundTruth, SCHEMA_VERSION};
use crate::estimator::{Snapshot, SnapshotSet};
use crate::geometry::Point2;
use crate::waveform::{PulseSpec, SignalVector};

/// The covariance ellipse is drawn at twice the standard deviation.
pub const ELLIPSE_SCALE: f64 = 2.0;
const ELLIPSE_SEGMENTS: usize = 72;
const MAGIC: &[u8; 8] = b"EXSNAP01";
const HEADER_NAMES: &str = "schema_version,n_samples,carrier_hz,sample_rate_hz,bandwidth_hz,rolloff,n_snapshots,agent_x,agent_y";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotFormat {
    #[default]
    Csv,
    Binary,
}

impl std::str::FromStr for SnapshotFormat {
    type Err = CampaignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "binary" | "bin" => Ok(Self::Binary),
            other => Err(CampaignError::Config(format!("unknown snapshot format {other:?}"))),
        }
    }
}

impl SnapshotFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Binary => "bin",
        }
    }
}

fn parse_err(location: impl Into<String>, message: impl Into<String>) -> CampaignError {
    CampaignError::Parse {
        location: location.into(),
        message: message.into(),
    }
}

pub fn export_snapshots(set: &SnapshotSet, path: &Path, format: SnapshotFormat) -> Result<(), CampaignError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    match format {
        SnapshotFormat::Csv => write_csv(set, &mut w)?,
        SnapshotFormat::Binary => write_binary(set, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

pub fn import_snapshots(path: &Path, format: SnapshotFormat) -> Result<SnapshotSet, CampaignError> {
    let file = fs::File::open(path)?;
    match format {
        SnapshotFormat::Csv => read_csv(BufReader::new(file)),
        SnapshotFormat::Binary => read_binary(BufReader::new(file)),
    }
}

fn write_csv(set: &SnapshotSet, w: &mut impl Write) -> std::io::Result<()> {
    let s = &set.spec;
    writeln!(w, "# exant snapshot file")?;
    writeln!(w, "{HEADER_NAMES}")?;
    writeln!(
        w,
        "{SCHEMA_VERSION},{},{},{},{},{},{},{},{}",
        s.n_samples,
        s.carrier_hz,
        s.sample_rate_hz,
        s.bandwidth_hz,
        s.rolloff,
        set.len(),
        set.agent.x,
        set.agent.y
    )?;
    let mut names = String::from("index,anchor_x,anchor_y,aoa");
    for k in 0..s.n_samples {
        let _ = write!(names, ",re_{k},im_{k}");
    }
    writeln!(w, "{names}")?;
    let mut line = String::new();
    for (m, snap) in set.snapshots.iter().enumerate() {
        line.clear();
        let _ = write!(line, "{m},{},{},{}", snap.anchor.x, snap.anchor.y, snap.aoa);
        for v in snap.signal.iter() {
            let _ = write!(line, ",{},{}", v.re, v.im);
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(location: &str, name: &str, text: &str) -> Result<T, CampaignError> {
    text.trim()
        .parse()
        .map_err(|_| parse_err(location, format!("field {name}: cannot parse {text:?}")))
}

fn read_csv(reader: impl BufRead) -> Result<SnapshotSet, CampaignError> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(t) if t.trim().is_empty() || t.starts_with('#')));
    let mut next_line = |what: &str| -> Result<(usize, String), CampaignError> {
        match lines.next() {
            Some((n, Ok(text))) => Ok((n, text)),
            Some((_, Err(e))) => Err(e.into()),
            None => Err(parse_err("end of file", format!("missing {what}"))),
        }
    };

    let (n, names) = next_line("header names")?;
    if names.trim() != HEADER_NAMES {
        return Err(parse_err(format!("line {n}"), "unexpected header names"));
    }
    let (n, header) = next_line("header record")?;
    let loc = format!("header record (line {n})");
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() != 9 {
        return Err(parse_err(&loc, format!("expected 9 fields, found {}", fields.len())));
    }
    let version: u32 = parse_field(&loc, "schema_version", fields[0])?;
    if version != SCHEMA_VERSION {
        return Err(parse_err(&loc, format!("unsupported schema_version {version}")));
    }
    let spec = PulseSpec {
        n_samples: parse_field(&loc, "n_samples", fields[1])?,
        carrier_hz: parse_field(&loc, "carrier_hz", fields[2])?,
        sample_rate_hz: parse_field(&loc, "sample_rate_hz", fields[3])?,
        bandwidth_hz: parse_field(&loc, "bandwidth_hz", fields[4])?,
        rolloff: parse_field(&loc, "rolloff", fields[5])?,
    };
    let count: usize = parse_field(&loc, "n_snapshots", fields[6])?;
    let agent = Point2::new(
        parse_field(&loc, "agent_x", fields[7])?,
        parse_field(&loc, "agent_y", fields[8])?,
    );
    next_line("column names")?;

    let mut snapshots = Vec::with_capacity(count);
    for m in 0..count {
        let (n, text) = next_line(&format!("record {m} of {count}")).map_err(|e| match e {
            CampaignError::Parse { .. } => parse_err(
                format!("record {m}"),
                format!("file ends after {m} of {count} records"),
            ),
            e => e,
        })?;
        let loc = format!("record {m} (line {n})");
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() < 4 || (fields.len() - 4) % 2 != 0 {
            return Err(parse_err(&loc, format!("malformed record with {} fields", fields.len())));
        }
        let samples = (fields.len() - 4) / 2;
        if samples != spec.n_samples {
            return Err(CampaignError::DimensionMismatch(format!(
                "{loc} has {samples} samples, header declares {}",
                spec.n_samples
            )));
        }
        let index: usize = parse_field(&loc, "index", fields[0])?;
        if index != m {
            return Err(parse_err(&loc, format!("index {index} out of order")));
        }
        let anchor = Point2::new(parse_field(&loc, "anchor_x", fields[1])?, parse_field(&loc, "anchor_y", fields[2])?);
        let aoa = parse_field(&loc, "aoa", fields[3])?;
        let signal = fields[4..]
            .chunks(2)
            .enumerate()
            .map(|(k, pair)| {
                Ok(Complex64::new(
                    parse_field(&loc, &format!("re_{k}"), pair[0])?,
                    parse_field(&loc, &format!("im_{k}"), pair[1])?,
                ))
            })
            .collect::<Result<Vec<_>, CampaignError>>()?;
        snapshots.push(Snapshot {
            signal: SignalVector::from(signal),
            anchor,
            aoa,
        });
    }
    if let Ok((n, _)) = next_line("") {
        return Err(parse_err(format!("line {n}"), format!("more records than the declared {count}")));
    }
    Ok(SnapshotSet::new(snapshots, agent, spec)?)
}

fn write_binary(set: &SnapshotSet, w: &mut impl Write) -> std::io::Result<()> {
    let s = &set.spec;
    w.write_all(MAGIC)?;
    w.write_all(&SCHEMA_VERSION.to_le_bytes())?;
    w.write_all(&(s.n_samples as u64).to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    for v in [s.carrier_hz, s.sample_rate_hz, s.bandwidth_hz, s.rolloff, set.agent.x, set.agent.y] {
        w.write_all(&v.to_le_bytes())?;
    }
    for snap in &set.snapshots {
        for v in [snap.anchor.x, snap.anchor.y, snap.aoa] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in snap.signal.iter() {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_binary(mut r: impl Read) -> Result<SnapshotSet, CampaignError> {
    fn take<const K: usize>(r: &mut impl Read, location: &str) -> Result<[u8; K], CampaignError> {
        let mut buf = [0u8; K];
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => parse_err(location, "truncated"),
            _ => e.into(),
        })?;
        Ok(buf)
    }
    let f64_at = |r: &mut dyn Read, loc: &str| -> Result<f64, CampaignError> {
        Ok(f64::from_le_bytes(take::<8>(&mut &mut *r, loc)?))
    };

    if &take::<8>(&mut r, "header")? != MAGIC {
        return Err(parse_err("header", "not an exant binary snapshot file"));
    }
    let version = u32::from_le_bytes(take::<4>(&mut r, "header")?);
    if version != SCHEMA_VERSION {
        return Err(parse_err("header", format!("unsupported schema_version {version}")));
    }
    let n_samples = u64::from_le_bytes(take::<8>(&mut r, "header")?) as usize;
    let count = u64::from_le_bytes(take::<8>(&mut r, "header")?) as usize;
    let mut h = [0.0; 6];
    for v in &mut h {
        *v = f64_at(&mut r, "header")?;
    }
    let spec = PulseSpec {
        carrier_hz: h[0],
        sample_rate_hz: h[1],
        n_samples,
        bandwidth_hz: h[2],
        rolloff: h[3],
    };
    spec.validate()?;
    let agent = Point2::new(h[4], h[5]);
    let mut snapshots = Vec::with_capacity(count.min(1 << 16));
    for m in 0..count {
        let loc = format!("record {m}");
        let anchor = Point2::new(f64_at(&mut r, &loc)?, f64_at(&mut r, &loc)?);
        let aoa = f64_at(&mut r, &loc)?;
        let mut signal = Vec::with_capacity(n_samples);
        for _ in 0..n_samples {
            signal.push(Complex64::new(f64_at(&mut r, &loc)?, f64_at(&mut r, &loc)?));
        }
        snapshots.push(Snapshot {
            signal: SignalVector::from(signal),
            anchor,
            aoa,
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(parse_err(format!("record {count}"), format!("data beyond the declared {count} records")));
    }
    Ok(SnapshotSet::new(snapshots, agent, spec)?)
}

pub fn export_ground_truth(truth: &GroundTruth, path: &Path) -> Result<(), CampaignError> {
    let mut text = serde_json::to_string_pretty(truth)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_report(path: &Path) -> Result<CampaignReport, CampaignError> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Writes `scatterers.csv`, `amplitudes.csv`, `sectors.csv`, `summary.csv`,
/// `ellipse.csv` and `report.json` into `out_dir`, creating it if needed.
pub fn export_report(report: &CampaignReport, out_dir: &Path) -> Result<(), CampaignError> {
    fs::create_dir_all(out_dir)?;
    let cal = &report.calibration;
    let j_count = report.n_scatterers();
    let amr_of = |j: usize| report.amr.as_ref().map(|a| a.scatterers_db[j]);

    let mut s = String::from("index,x,y,score,beta_bar,par_db,amr_db\n");
    for j in 0..j_count {
        let q = cal.q_hat[j];
        let _ = writeln!(
            s,
            "{j},{},{},{},{},{},{}",
            q.x,
            q.y,
            cal.scores[j],
            report.beta_bar[j],
            report.par.scatterers_db[j],
            opt(amr_of(j))
        );
    }
    fs::write(out_dir.join("scatterers.csv"), s)?;

    let mut s = String::from("index,anchor_x,anchor_y,aoa,alpha_re,alpha_im,alpha_abs");
    for j in 0..j_count {
        let _ = write!(s, ",beta_{j}_re,beta_{j}_im");
    }
    s.push('\n');
    for (m, (a, alpha)) in report.anchors.iter().zip(&cal.alpha_hat).enumerate() {
        let _ = write!(s, "{m},{},{},{},{},{},{}", a.x, a.y, report.aoas[m], alpha.re, alpha.im, alpha.norm());
        for b in cal.beta_hat.row(m) {
            let _ = write!(s, ",{},{}", b.re, b.im);
        }
        s.push('\n');
    }
    fs::write(out_dir.join("amplitudes.csv"), s)?;

    let mut s = String::from("series,sector,center,count,mean,mean_db\n");
    for series in &report.sectors {
        let st = &series.stats;
        for k in 0..st.n_sectors {
            let _ = writeln!(
                s,
                "{},{k},{},{},{},{}",
                series.name,
                st.centers[k],
                st.counts[k],
                opt(st.means[k]),
                opt(st.mean_db(k))
            );
        }
    }
    fs::write(out_dir.join("sectors.csv"), s)?;

    let mut s = String::from("quantity,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(s, "{k},{v}");
    };
    row("label", report.label.to_string());
    row("n_snapshots", report.aoas.len().to_string());
    row("n_scatterers", j_count.to_string());
    row("noise_variance", cal.noise_variance.to_string());
    row("final_loglik", opt(cal.loglik_trace.last().copied()));
    row("alpha_bar", report.alpha_bar.to_string());
    row("par_los_db", report.par.los_db.to_string());
    row("amr_reference_label", report.amr.as_ref().map_or("NA".into(), |a| a.reference_label.to_string()));
    row("amr_los_db", opt(report.amr.as_ref().map(|a| a.los_db)));
    for j in 0..j_count {
        row(&format!("par_scatterer_{j}_db"), report.par.scatterers_db[j].to_string());
        row(&format!("amr_scatterer_{j}_db"), opt(amr_of(j)));
    }
    if let Some(shape) = &report.shape {
        row("mu_x", shape.mu.x.to_string());
        row("mu_y", shape.mu.y.to_string());
        row("sigma_xx", shape.sigma.xx.to_string());
        row("sigma_xy", shape.sigma.xy.to_string());
        row("sigma_yy", shape.sigma.yy.to_string());
    }
    fs::write(out_dir.join("summary.csv"), s)?;

    let mut s = format!("# scale_factor={ELLIPSE_SCALE}\nx,y\n");
    if let Some(shape) = &report.shape {
        for p in shape.ellipse(ELLIPSE_SCALE, ELLIPSE_SEGMENTS) {
            let _ = writeln!(s, "{},{}", p.x, p.y);
        }
    }
    fs::write(out_dir.join("ellipse.csv"), s)?;

    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(out_dir.join("report.json"), json)?;
    Ok(())
}
