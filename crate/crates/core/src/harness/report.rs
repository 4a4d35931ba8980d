use std::str::FromStr;

use super::{Row, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// One row per (point, metric): benchmark, grid keys..., metric, value, unit.
    Csv,
    /// One line per grid point, one column per metric.
    Table,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            _ => Err(format!("unknown format `{s}` (csv or table)")),
        }
    }
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Num(x) => format!("{x:.4}"),
        Value::Error(e) => format!("error:{}", e.name()),
    }
}

/// Union of grid keys in first-seen order.
fn keys(rows: &[Row]) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for r in rows {
        for (k, _) in &r.point {
            if !out.contains(&k.as_str()) {
                out.push(k);
            }
        }
    }
    out
}

fn lookup<'a>(point: &'a [(String, String)], key: &str) -> &'a str {
    point.iter().find(|(k, _)| k == key).map_or("", |(_, v)| v)
}

pub fn report(rows: &[Row], format: Format) -> String {
    match format {
        Format::Csv => csv_report(rows),
        Format::Table => table_report(rows),
    }
}

fn csv_report(rows: &[Row]) -> String {
    let keys = keys(rows);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["benchmark"];
    header.extend(&keys);
    header.extend(["metric", "value", "unit"]);
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec: Vec<String> = vec![r.benchmark.name().to_string()];
        rec.extend(keys.iter().map(|k| lookup(&r.point, k).to_string()));
        rec.push(r.metric.to_string());
        rec.push(value_text(&r.value));
        rec.push(r.unit.to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

fn table_report(rows: &[Row]) -> String {
    let keys = keys(rows);
    let mut metrics: Vec<(&str, &str)> = Vec::new();
    let mut lines: Vec<(&Row, Vec<Option<String>>)> = Vec::new();
    for r in rows {
        let col = match metrics.iter().position(|&(m, _)| m == r.metric) {
            Some(i) => i,
            None => {
                metrics.push((r.metric, r.unit));
                metrics.len() - 1
            }
        };
        let line = match lines.iter().position(|(first, _)| first.benchmark == r.benchmark && first.point == r.point) {
            Some(i) => i,
            None => {
                lines.push((r, Vec::new()));
                lines.len() - 1
            }
        };
        let cells = &mut lines[line].1;
        if cells.len() <= col {
            cells.resize(col + 1, None);
        }
        cells[col] = Some(value_text(&r.value));
    }

    let mut header: Vec<String> = vec!["benchmark".into()];
    header.extend(keys.iter().map(|k| k.to_string()));
    for (m, u) in &metrics {
        header.push(if u.is_empty() { m.to_string() } else { format!("{m} [{u}]") });
    }
    let mut table = vec![header];
    for (first, cells) in &lines {
        let mut line: Vec<String> = vec![first.benchmark.name().to_string()];
        line.extend(keys.iter().map(|k| lookup(&first.point, k).to_string()));
        for i in 0..metrics.len() {
            line.push(cells.get(i).cloned().flatten().unwrap_or_default());
        }
        table.push(line);
    }

    let cols = table[0].len();
    let widths: Vec<usize> = (0..cols).map(|c| table.iter().map(|l| l[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for line in table {
        let mut s = String::new();
        for (c, cell) in line.iter().enumerate() {
            if c > 0 {
                s.push_str("  ");
            }
            s.push_str(&format!("{cell:<w$}", w = widths[c]));
        }
        out.push_str(s.trim_end());
        out.push('\n');
    }
    out
}
