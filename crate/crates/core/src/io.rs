//! Data ingestion and report emission.
//!
//! Panels are long-format CSV files with the header
//! `unit_id,arm,stratum,period,outcome_type,count`. Value files hold one
//! number per line with an optional header line. Reports are rendered as
//! aligned text tables (6 significant digits) and as versioned JSON (full
//! precision).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{GmlmError, Result};
use crate::montecarlo::McResult;
use crate::panel::{CellStatus, PanelDataset, PanelRecord, PanelReport};

pub const SCHEMA_VERSION: u32 = 1;
pub const PANEL_HEADER: [&str; 6] = ["unit_id", "arm", "stratum", "period", "outcome_type", "count"];

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| GmlmError::Io(format!("{}: {e}", path.display())))
}

fn csv_error(e: csv::Error) -> GmlmError {
    match e.position() {
        Some(p) => GmlmError::data(p.line() as usize, e.to_string()),
        None => GmlmError::Io(e.to_string()),
    }
}

/// One value per line; a non-numeric first line is taken as a header.
pub fn read_values_csv(path: &Path) -> Result<Vec<f64>> {
    parse_values(open(path)?)
}

pub fn parse_values<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let field = rec.get(0).unwrap_or("");
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(v) => return Err(GmlmError::data(line, format!("non-finite value {v}"))),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(GmlmError::data(line, format!("'{field}' is not a number"))),
        }
    }
    if out.is_empty() {
        return Err(GmlmError::data(0, "no values"));
    }
    Ok(out)
}

pub fn parse_panel_csv(path: &Path) -> Result<PanelDataset> {
    parse_panel(open(path)?)
}

pub fn parse_panel<R: Read>(reader: R) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.is_empty() || (header.len() == 1 && header.get(0) == Some("")) {
        return Err(GmlmError::data(1, "empty file"));
    }
    if header.iter().collect::<Vec<_>>() != PANEL_HEADER {
        return Err(GmlmError::data(
            1,
            format!("header must be '{}'", PANEL_HEADER.join(",")),
        ));
    }
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |k: usize| rec.get(k).unwrap_or("");
        let bad = |msg: String| GmlmError::data(line, msg);
        let count: f64 = field(5)
            .parse()
            .map_err(|_| bad(format!("count '{}' is not a number", field(5))))?;
        if !(count.is_finite() && count >= 0.0) {
            return Err(bad(format!("count {count} must be finite and ≥ 0")));
        }
        records.push(PanelRecord {
            unit_id: field(0).to_string(),
            arm: field(1).parse().map_err(bad)?,
            stratum: field(2).parse().map_err(bad)?,
            period: field(3).to_string(),
            outcome_type: field(4).parse().map_err(bad)?,
            count,
        });
        lines.push(line);
    }
    if records.is_empty() {
        return Err(GmlmError::data(1, "no data rows"));
    }
    PanelDataset::new(records).map_err(|e| match e {
        GmlmError::Data { line, message } => GmlmError::Data {
            line: lines.get(line.wrapping_sub(1)).copied().unwrap_or(line),
            message,
        },
        other => other,
    })
}

pub fn write_panel<W: Write>(data: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PANEL_HEADER).map_err(csv_error)?;
    for r in data.records() {
        w.write_record([
            r.unit_id.as_str(),
            r.arm.as_str(),
            r.stratum.as_str(),
            r.period.as_str(),
            r.outcome_type.as_str(),
            &r.count.to_string(),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(|e| GmlmError::Io(e.to_string()))?;
    Ok(())
}

pub fn write_panel_csv(data: &PanelDataset, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| GmlmError::Io(format!("{}: {e}", path.display())))?;
    write_panel(data, f)
}

/// `x` rounded to 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("formatted float");
    let a = rounded.abs();
    if a != 0.0 && !(1e-4..1e9).contains(&a) {
        format!("{rounded:.5e}")
    } else {
        format!("{rounded}")
    }
}

pub fn opt_sig6(x: Option<f64>) -> String {
    x.map_or_else(|| "-".into(), sig6)
}

/// A right-aligned text table.
#[derive(Debug, Clone, Default)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let cols = self.headers.len();
        let mut width: Vec<usize> = self.headers.iter().map(|h| h.chars().count()).collect();
        for row in &self.rows {
            for (i, cell) in row.iter().enumerate().take(cols) {
                width[i] = width[i].max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{:>w$}", c, w = width[i]))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }
}

/// Wraps a report body in a versioned JSON envelope.
pub fn json_report<T: Serialize>(kind: &str, seed: Option<u64>, body: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Envelope<'a, T> {
        schema_version: u32,
        kind: &'a str,
        #[serde(skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
        report: &'a T,
    }
    serde_json::to_string_pretty(&Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        seed,
        report: body,
    })
    .map_err(|e| GmlmError::Io(e.to_string()))
}

pub fn render_mc(res: &McResult) -> String {
    let mut t = Table::new([
        "estimator", "N", "RMSE", "MAE", "coverage", "length", "J-rate", "median R", "failures",
    ]);
    for r in &res.rows {
        t.push(vec![
            r.estimator.label().to_string(),
            r.n.to_string(),
            sig6(r.rmse),
            sig6(r.mae),
            sig6(r.coverage),
            sig6(r.avg_length),
            opt_sig6(r.j_rate),
            opt_sig6(r.median_r),
            r.failures.to_string(),
        ]);
    }
    t.render()
}

pub fn render_panel(rep: &PanelReport) -> String {
    let mut t = Table::new([
        "outcome", "period", "discount", "stratum", "status", "R", "delta", "se", "psi", "se",
        "J p-value", "DiM", "se", "sd ratio-1", "se",
    ]);
    for r in &rep.rows {
        let e = r.estimate.as_ref();
        let b = r.baseline.as_ref();
        let status = match r.status {
            CellStatus::Ok => "ok",
            CellStatus::Unavailable => "unavailable",
            CellStatus::Failed => "failed",
        };
        t.push(vec![
            r.outcome.to_string(),
            r.period.clone(),
            r.discount.to_string(),
            r.stratum.to_string(),
            status.into(),
            e.map_or("-".into(), |e| e.r_used.to_string()),
            opt_sig6(e.map(|e| e.delta)),
            opt_sig6(e.map(|e| e.delta_se)),
            opt_sig6(e.map(|e| e.psi)),
            opt_sig6(e.map(|e| e.psi_se)),
            opt_sig6(e.map(|e| e.j_pvalue)),
            opt_sig6(b.map(|b| b.diff_in_means)),
            opt_sig6(b.map(|b| b.diff_in_means_se)),
            opt_sig6(b.map(|b| b.sd_ratio_minus_one)),
            opt_sig6(b.map(|b| b.sd_ratio_se)),
        ]);
    }
    let mut out = t.render();

    let mut a = Table::new(["outcome", "period", "discount", "delta", "se", "psi", "se"]);
    for r in &rep.aggregates {
        a.push(vec![
            r.outcome.to_string(),
            r.period.clone(),
            r.discount.to_string(),
            sig6(r.delta.value),
            sig6(r.delta.se),
            sig6(r.psi.value),
            sig6(r.psi.se),
        ]);
    }
    out.push_str("\nAggregated over strata\n");
    out.push_str(&a.render());

    let mut c = Table::new(["outcome", "period", "stratum", "control mean", "n"]);
    for r in &rep.control_means {
        c.push(vec![
            r.outcome.to_string(),
            r.period.clone(),
            r.stratum.to_string(),
            sig6(r.mean),
            r.n.to_string(),
        ]);
    }
    out.push_str("\nControl means\n");
    out.push_str(&c.render());

    let failed: Vec<_> = rep.rows.iter().filter(|r| r.message.is_some()).collect();
    if !failed.is_empty() {
        out.push_str("\nNotes\n");
        for r in failed {
            out.push_str(&format!(
                "{}/{}/{}/{}: {}\n",
                r.outcome,
                r.period,
                r.discount,
                r.stratum,
                r.message.as_deref().unwrap_or("")
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{Arm, OutcomeType, Stratum};

    const PANEL: &str = "unit_id,arm,stratum,period,outcome_type,count
u1,control,user,2018-12-10,integrated,3
u2,d20,nonuser,2018-12-10,integrated,0.5
u1,control,user,2018-12-10,nonintegrated,1
u2,d20,nonuser,2018-12-10,nonintegrated,2
";

    #[test]
    fn panel_round_trip() {
        let d = parse_panel(PANEL.as_bytes()).unwrap();
        assert_eq!(d.records().len(), 4);
        assert_eq!(d.records()[1].arm, Arm::D20);
        assert_eq!(d.records()[1].stratum, Stratum::Nonuser);
        assert_eq!(d.records()[2].outcome_type, OutcomeType::Nonintegrated);
        let mut buf = Vec::new();
        write_panel(&d, &mut buf).unwrap();
        assert_eq!(parse_panel(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn panel_errors_cite_lines() {
        let dup = format!("{PANEL}u1,control,user,2018-12-10,integrated,4\n");
        match parse_panel(dup.as_bytes()) {
            Err(GmlmError::Data { line, .. }) => assert_eq!(line, 6),
            other => panic!("{other:?}"),
        }
        let neg = PANEL.replace("0.5", "-1");
        assert!(matches!(parse_panel(neg.as_bytes()), Err(GmlmError::Data { line: 3, .. })));
        let arm = PANEL.replace("d20", "d30");
        assert!(matches!(parse_panel(arm.as_bytes()), Err(GmlmError::Data { line: 3, .. })));
        assert!(parse_panel("".as_bytes()).is_err());
        assert!(parse_panel("a,b\n1,2\n".as_bytes()).is_err());
        assert!(parse_panel("unit_id,arm,stratum,period,outcome_type,count\n".as_bytes()).is_err());
    }

    #[test]
    fn values_with_and_without_header() {
        assert_eq!(parse_values("x\n1\n2.5\n\n3\n".as_bytes()).unwrap(), vec![1.0, 2.5, 3.0]);
        assert_eq!(parse_values("1\n2\n".as_bytes()).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            parse_values("1\nfoo\n".as_bytes()),
            Err(GmlmError::Data { line: 2, .. })
        ));
        assert!(parse_values("".as_bytes()).is_err());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(4253.0612), "4253.06");
        assert_eq!(sig6(-0.60670004), "-0.6067");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(123456789.0), "123457000");
        assert_eq!(sig6(1.234567e-7), "1.23457e-7");
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn table_alignment() {
        let mut t = Table::new(["a", "bbb"]);
        t.push(vec!["10".into(), "2".into()]);
        assert_eq!(t.render(), " a  bbb\n--  ---\n10    2\n");
    }

    #[test]
    fn json_envelope() {
        let s = json_report("test", Some(3), &vec![1.5]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["seed"], 3);
        assert_eq!(v["report"][0], 1.5);
    }
}
