use std::str::FromStr;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::gaussian::{gbb_to_lgbb, gbb_to_obb, lgbb_to_gbb, obb_to_gbb, Gbb, Lgbb};
use crate::geometry::ObbLe;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxForm {
    Obb,
    Gbb,
    Lgbb,
}

impl FromStr for BoxForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "obb" => Ok(BoxForm::Obb),
            "gbb" => Ok(BoxForm::Gbb),
            "lgbb" => Ok(BoxForm::Lgbb),
            other => Err(Error::UnknownKind(other.to_string())),
        }
    }
}

/// Everything routes through a positive definite [`Gbb`].
fn parse(v: &Value, form: BoxForm) -> Result<Gbb> {
    let decode = |e: serde_json::Error| Error::Decode(e.to_string());
    match form {
        BoxForm::Obb => Ok(obb_to_gbb(&serde_json::from_value::<ObbLe>(v.clone()).map_err(decode)?)),
        BoxForm::Gbb => {
            let g: Gbb = serde_json::from_value(v.clone()).map_err(decode)?;
            g.check_positive_definite()?;
            Ok(g)
        }
        BoxForm::Lgbb => lgbb_to_gbb(&serde_json::from_value::<Lgbb>(v.clone()).map_err(decode)?),
    }
}

fn render(g: &Gbb, form: BoxForm) -> Result<Value> {
    let v = match form {
        BoxForm::Obb => serde_json::to_value(gbb_to_obb(g)?)?,
        BoxForm::Gbb => serde_json::to_value(g)?,
        BoxForm::Lgbb => serde_json::to_value(gbb_to_lgbb(g))?,
    };
    Ok(v)
}

fn convert_one(v: &Value, from: BoxForm, to: BoxForm, roundtrip: bool) -> Result<Value> {
    let g = parse(v, from)?;
    let converted = render(&g, to)?;
    if !roundtrip {
        return Ok(converted);
    }
    let back = render(&parse(&converted, to)?, from)?;
    Ok(json!({"converted": converted, "roundtrip": back}))
}

/// Converts a JSON array of records between box forms. Records that fail to
/// parse or are not positive definite become `{"error", "index"}` entries.
pub fn convert_records(input: &Value, from: BoxForm, to: BoxForm, roundtrip: bool) -> Result<Value> {
    let items = input
        .as_array()
        .ok_or_else(|| Error::Decode("expected a JSON array of records".into()))?;
    let out = items
        .iter()
        .enumerate()
        .map(|(i, v)| convert_one(v, from, to, roundtrip).unwrap_or_else(|e| json!({"error": e.to_string(), "index": i})))
        .collect();
    Ok(Value::Array(out))
}
