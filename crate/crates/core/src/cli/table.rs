//! Result rows and their CSV form.

use std::fmt::Write as _;
use std::io::Write;

pub const CSV_HEADER: &str = "scenario,quantity,estimate,std_error,reference,provenance,pass,wall_time_s";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scenario: String,
    pub quantity: String,
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub reference: Option<f64>,
    /// Where the reference comes from; required whenever `reference` is set.
    pub provenance: String,
    /// `None` for informational rows.
    pub pass: Option<bool>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn float(out: &mut String, v: Option<f64>) {
    if let Some(v) = v {
        // 17 significant digits round-trip every f64
        let _ = write!(out, "{v:.16e}");
    }
}

fn text(out: &mut String, s: &str) {
    if s.contains([',', '"', '\n']) {
        let _ = write!(out, "\"{}\"", s.replace('"', "\"\""));
    } else {
        out.push_str(s);
    }
}

impl ResultTable {
    pub fn push(&mut self, row: ResultRow) {
        debug_assert!(row.reference.is_none() || !row.provenance.is_empty());
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.pass == Some(false))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            text(&mut out, &r.scenario);
            out.push(',');
            text(&mut out, &r.quantity);
            out.push(',');
            float(&mut out, Some(r.estimate));
            out.push(',');
            float(&mut out, r.std_error);
            out.push(',');
            float(&mut out, r.reference);
            out.push(',');
            text(&mut out, &r.provenance);
            out.push(',');
            if let Some(p) = r.pass {
                out.push_str(if p { "true" } else { "false" });
            }
            out.push(',');
            let _ = write!(out, "{:.6}", r.wall_time_s);
            out.push('\n');
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(self.to_csv().as_bytes())
    }
}
