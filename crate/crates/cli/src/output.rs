//! Column-text (CSV) and structured-record (JSON) writers and the CSV reader.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use nvtorque::SignalTrace;

use crate::config::Format;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Field {
    pub name: String,
    pub unit: String,
    pub value: f64,
}

/// Scalar results of a run (fits, sensitivities, oracle comparisons).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Record {
    pub fields: Vec<Field>,
    pub metadata: BTreeMap<String, String>,
}

impl Record {
    pub fn new() -> Self {
        Self {
            fields: Vec::new(),
            metadata: BTreeMap::new(),
        }
    }

    pub fn push(&mut self, name: &str, unit: &str, value: f64) {
        self.fields.push(Field {
            name: name.into(),
            unit: unit.into(),
            value,
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.fields.iter().find(|f| f.name == name).map(|f| f.value)
    }
}

impl Default for Record {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Trace(SignalTrace),
    Record(Record),
}

impl Output {
    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        match self {
            Output::Trace(t) => &mut t.metadata,
            Output::Record(r) => &mut r.metadata,
        }
    }

    pub fn render(&self, format: Format) -> String {
        match (self, format) {
            (Output::Trace(t), Format::Csv) => trace_csv(t),
            (Output::Record(r), Format::Csv) => record_csv(r),
            (Output::Trace(t), Format::Json) => json(t),
            (Output::Record(r), Format::Json) => json(r),
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output is always serializable");
    s.push('\n');
    s
}

fn number(v: f64) -> String {
    format!("{v:e}")
}

fn header(metadata: &BTreeMap<String, String>, out: &mut String) {
    for (k, v) in metadata {
        let _ = writeln!(out, "# {k} = {v}");
    }
}

pub fn trace_csv(t: &SignalTrace) -> String {
    let mut out = String::new();
    header(&t.metadata, &mut out);
    let names: Vec<String> = std::iter::once(&t.abscissa)
        .chain(&t.channels)
        .map(|c| format!("{}[{}]", c.name, c.unit))
        .collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..t.len() {
        let row: Vec<String> = std::iter::once(&t.abscissa)
            .chain(&t.channels)
            .map(|c| number(c.values[i]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn record_csv(r: &Record) -> String {
    let mut out = String::new();
    header(&r.metadata, &mut out);
    let names: Vec<String> = r.fields.iter().map(|f| format!("{}[{}]", f.name, f.unit)).collect();
    let values: Vec<String> = r.fields.iter().map(|f| number(f.value)).collect();
    let _ = writeln!(out, "{}\n{}", names.join(","), values.join(","));
    out
}

fn split_header(cell: &str) -> Result<(String, String), CliError> {
    let cell = cell.trim();
    match (cell.find('['), cell.strip_suffix(']')) {
        (Some(open), Some(body)) => Ok((cell[..open].to_string(), body[open + 1..].to_string())),
        _ => Err(CliError::Config(format!("column header `{cell}` is not of the form name[unit]"))),
    }
}

/// Reads a trace written by [`trace_csv`]; the first column is the abscissa.
pub fn read_trace_csv(text: &str) -> Result<SignalTrace, CliError> {
    let mut metadata = BTreeMap::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut header_line = None;
    for (_, line) in lines.by_ref() {
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.split_once('=') {
                metadata.insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        header_line = Some(line);
        break;
    }
    let header_line = header_line.ok_or_else(|| CliError::Config("data file has no header line".into()))?;
    let columns = header_line.split(',').map(split_header).collect::<Result<Vec<_>, _>>()?;
    let mut values = vec![Vec::new(); columns.len()];
    for (i, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(CliError::Config(format!(
                "data line {}: expected {} values, found {}",
                i + 1,
                columns.len(),
                cells.len()
            )));
        }
        for (col, cell) in values.iter_mut().zip(cells) {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("data line {}: `{}` is not a number", i + 1, cell.trim())))?;
            col.push(v);
        }
    }
    let mut values = values.into_iter();
    let (name, unit) = &columns[0];
    let mut trace = SignalTrace::new(name.as_str(), unit.as_str(), values.next().unwrap_or_default())
        .map_err(|e| CliError::Config(format!("data file: {e}")))?;
    for ((name, unit), v) in columns[1..].iter().zip(values) {
        trace
            .push_channel(name.as_str(), unit.as_str(), v)
            .map_err(|e| CliError::Config(format!("data file: {e}")))?;
    }
    trace.metadata = metadata;
    Ok(trace)
}
