use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::{
    AttributeKind, AttributeValue, ColumnMap, Dataset, OutcomeKind, OutcomeValue,
    PredictionRecord, Split,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(RecordFormat::Jsonl),
            "csv" => Ok(RecordFormat::Csv),
            other => Err(Error::Validation(format!("unknown record format '{other}'"))),
        }
    }
}

/// Parse prediction records from a stream. CSV requires a column map; JSONL
/// ignores it. Malformed lines and rows fail with their line number. An empty
/// stream yields an empty dataset.
pub fn parse_records(
    reader: impl BufRead,
    format: RecordFormat,
    column_map: Option<&ColumnMap>,
) -> Result<Dataset> {
    match format {
        RecordFormat::Jsonl => parse_jsonl(reader),
        RecordFormat::Csv => {
            let map = column_map.ok_or_else(|| {
                Error::Validation("csv input needs a column map (config [csv] section)".into())
            })?;
            parse_csv(reader, map)
        }
    }
}

fn parse_jsonl(reader: impl BufRead) -> Result<Dataset> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        records.push(rec);
    }
    Dataset::new(records)
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Validation(format!("csv is missing mapped column '{name}'")))
}

fn parse_csv(reader: impl BufRead, map: &ColumnMap) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    if !rdr.has_headers() {
        return Err(Error::Validation("csv input needs a header row".into()));
    }
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Dataset::new(Vec::new());
    }

    let id_col = column_index(&headers, &map.id)?;
    let y_true_col = column_index(&headers, &map.y_true)?;
    let y_pred_col = column_index(&headers, &map.y_pred)?;
    let split_col = column_index(&headers, &map.split)?;
    let weight_col = map.weight.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let text_col = map.text.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let attr_cols: Vec<(&str, usize, AttributeKind)> = map
        .attributes
        .iter()
        .map(|(name, ac)| Ok((name.as_str(), column_index(&headers, &ac.column)?, ac.kind)))
        .collect::<Result<_>>()?;

    let parse_outcome = |raw: &str, line: usize| -> Result<OutcomeValue> {
        match map.outcome_kind {
            OutcomeKind::Categorical => Ok(OutcomeValue::Label(raw.to_string())),
            OutcomeKind::Continuous => raw
                .parse::<f64>()
                .map(OutcomeValue::Value)
                .map_err(|_| Error::Parse { line, message: format!("'{raw}' is not a number") }),
        }
    };

    let mut records = Vec::new();
    for row in rdr.records() {
        let row = match &row {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                return Err(Error::Parse { line, message: e.to_string() });
            }
        };
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |idx: usize| -> &str { row.get(idx).unwrap_or("") };

        let split = match field(split_col) {
            "source" => Split::Source,
            "target" => Split::Target,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("split must be 'source' or 'target', got '{other}'"),
                })
            }
        };
        let weight = match weight_col {
            Some(col) if !field(col).is_empty() => {
                field(col).parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("weight '{}' is not a number", field(col)),
                })?
            }
            _ => 1.0,
        };
        let mut attrs = BTreeMap::new();
        for (name, col, kind) in &attr_cols {
            let raw = field(*col);
            if raw.is_empty() {
                continue;
            }
            let value = match kind {
                AttributeKind::Categorical => AttributeValue::Categorical(raw.to_string()),
                AttributeKind::Continuous =>

                    AttributeValue::Continuous(raw.parse::<f64>().map_err(|_| Error::Parse {
                        line,
                        message: format!("attribute '{name}' value '{raw}' is not a number"),
                    })?),
            };
            attrs.insert((*name).to_string(), value);
        }

        records.push(PredictionRecord {
            id: field(id_col).to_string(),
            y_true: parse_outcome(field(y_true_col), line)?,
            y_pred: parse_outcome(field(y_pred_col), line)?,
            attrs,
            split,
            text: text_col.map(|c| field(c).to_string()).filter(|t| !t.is_empty()),
            weight,
        });
    }
    Dataset::new(records)
}

/// Write records as JSON Lines. Weight 1.0 and absent text are omitted, so a
/// parse/serialize round trip reproduces the input.
pub fn write_jsonl(dataset: &Dataset, mut writer: impl Write) -> Result<()> {
    for rec in &dataset.records {
        serde_json::to_writer(&mut writer, rec)
            .map_err(|e| Error::Validation(format!("serializing record '{}': {e}", rec.id)))?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

fn outcome_field(v: &OutcomeValue) -> String {
    match v {
        OutcomeValue::Label(s) => s.clone(),
        OutcomeValue::Value(x) => format!("{x}"),
    }
}

/// Write records as CSV under the given column map. Numbers use the shortest
/// representation that parses back to the same value.
pub fn write_csv(dataset: &Dataset, writer: impl Write, map: &ColumnMap) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![map.id.clone(), map.y_true.clone(), map.y_pred.clone(), map.split.clone()];
    if let Some(w) = &map.weight {
        header.push(w.clone());
    }
    if let Some(t) = &map.text {
        header.push(t.clone());
    }
    for ac in map.attributes.values() {
        header.push(ac.column.clone());
    }
    wtr.write_record(&header).map_err(|e| Error::Validation(e.to_string()))?;

    for rec in &dataset.records {
        let mut row = vec![
            rec.id.clone(),
            outcome_field(&rec.y_true),
            outcome_field(&rec.y_pred),
            rec.split.to_string(),
        ];
        if map.weight.is_some() {
            row.push(format!("{}", rec.weight));
        }
        if map.text.is_some() {
            row.push(rec.text.clone().unwrap_or_default());
        }
        for name in map.attributes.keys() {
            row.push(match rec.attrs.get(name) {
                Some(AttributeValue::Categorical(s)) => s.clone(),
                Some(AttributeValue::Continuous(v)) => format!("{v}"),
                None => String::new(),
            });
        }
        wtr.write_record(&row).map_err(|e| Error::Validation(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
