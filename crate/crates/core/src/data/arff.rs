//! Dense ARFF reader for MULAN-style multi-label files.

use super::{DatasetDescriptor, LabelPosition, MultiLabelDataset, NominalEncoding};
use crate::error::{DosaError, Result};

#[derive(Clone, Debug, PartialEq)]
enum AttrType {
    Numeric,
    Nominal(Vec<String>),
}

#[derive(Clone, Debug)]
struct Attribute {
    name: String,
    kind: AttrType,
}

/// Splits a comma-separated record, honouring single and double quotes.
pub(crate) fn split_fields(line: &str, line_no: usize) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quote: Option<char> = None;
    let mut chars = line.chars().peekable();
    let mut was_quoted = false;
    while let Some(ch) = chars.next() {
        match quote {
            Some(q) if ch == q => quote = None,
            Some(_) if ch == '\\' => {
                if let Some(next) = chars.next() {
                    cur.push(next);
                }
            }
            Some(_) => cur.push(ch),
            None => match ch {
                '\'' | '"' => {
                    if cur.trim().is_empty() {
                        cur.clear();
                    }
                    quote = Some(ch);
                    was_quoted = true;
                }
                ',' => {
                    out.push(finish_field(&cur, was_quoted));
                    cur.clear();
                    was_quoted = false;
                }
                _ => cur.push(ch),
            },
        }
    }
    if quote.is_some() {
        return Err(DosaError::Parse {
            line: line_no,
            message: "unterminated quote".into(),
        });
    }
    out.push(finish_field(&cur, was_quoted));
    Ok(out)
}

fn finish_field(s: &str, quoted: bool) -> String {
    if quoted {
        s.to_string()
    } else {
        s.trim().to_string()
    }
}

/// Splits `name rest` where `name` may be quoted.
fn split_name(s: &str, line_no: usize) -> Result<(String, &str)> {
    let s = s.trim_start();
    let first = s.chars().next().ok_or_else(|| DosaError::Parse {
        line: line_no,
        message: "missing attribute name".into(),
    })?;
    if first == '\'' || first == '"' {
        let end = s[1..].find(first).ok_or_else(|| DosaError::Parse {
            line: line_no,
            message: "unterminated quoted name".into(),
        })?;
        Ok((s[1..1 + end].to_string(), &s[end + 2..]))
    } else {
        let end = s.find(char::is_whitespace).unwrap_or(s.len());
        Ok((s[..end].to_string(), &s[end..]))
    }
}

fn parse_attribute(rest: &str, line_no: usize) -> Result<Attribute> {
    let (name, ty) = split_name(rest, line_no)?;
    let ty = ty.trim();
    let kind = if ty.starts_with('{') {
        let close = ty.rfind('}').ok_or_else(|| DosaError::Parse {
            line: line_no,
            message: "nominal type without closing brace".into(),
        })?;
        let values = split_fields(&ty[1..close], line_no)?;
        AttrType::Nominal(values)
    } else {
        match ty.to_ascii_lowercase().as_str() {
            "numeric" | "real" | "integer" => AttrType::Numeric,
            "" => {
                return Err(DosaError::Parse {
                    line: line_no,
                    message: format!("attribute '{name}' has no type"),
                })
            }
            other => {
                return Err(DosaError::UnsupportedType {
                    line: line_no,
                    kind: other.split_whitespace().next().unwrap_or(other).to_string(),
                })
            }
        }
    };
    Ok(Attribute { name, kind })
}

fn parse_label(raw: &str, attr: &Attribute, line_no: usize) -> Result<f64> {
    let positive = match (&attr.kind, raw) {
        (_, "1") | (_, "1.0") => true,
        (_, "0") | (_, "0.0") | (_, "-1") => false,
        (AttrType::Nominal(vals), v) if vals.len() == 2 && vals.iter().any(|x| x == v) => v == vals[1],
        _ => {
            return Err(DosaError::Parse {
                line: line_no,
                message: format!("label '{}' has non-binary value '{raw}'", attr.name),
            })
        }
    };
    Ok(if positive { 1.0 } else { -1.0 })
}

pub fn parse_arff(text: &str, desc: &DatasetDescriptor) -> Result<MultiLabelDataset> {
    let mut attrs: Vec<Attribute> = Vec::new();
    let mut relation: Option<String> = None;
    let mut in_data = false;
    let mut feature_rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut label_rows: Vec<Vec<f64>> = Vec::new();
    let mut layout: Option<Layout> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@relation") {
                let (name, _) = split_name(&line[9..], line_no)?;
                relation = Some(name);
            } else if lower.starts_with("@attribute") {
                attrs.push(parse_attribute(&line[10..], line_no)?);
            } else if lower.starts_with("@data") {
                in_data = true;
                layout = Some(Layout::new(&attrs, desc, line_no)?);
            } else {
                return Err(DosaError::Parse {
                    line: line_no,
                    message: format!("unexpected header line '{line}'"),
                });
            }
            continue;
        }
        if line.starts_with('{') {
            return Err(DosaError::Parse {
                line: line_no,
                message: "sparse ARFF rows are not supported".into(),
            });
        }
        let layout = layout.as_ref().expect("layout set at @data");
        let fields = split_fields(line, line_no)?;
        if fields.len() != attrs.len() {
            return Err(DosaError::Parse {
                line: line_no,
                message: format!("expected {} values, found {}", attrs.len(), fields.len()),
            });
        }
        let mut frow = Vec::with_capacity(layout.feature_width);
        let mut lrow = Vec::with_capacity(desc.label_count);
        for (a, (attr, v)) in attrs.iter().zip(&fields).enumerate() {
            if layout.is_label[a] {
                if v == "?" {
                    return Err(DosaError::Parse {
                        line: line_no,
                        message: format!("missing value for label '{}'", attr.name),
                    });
                }
                lrow.push(parse_label(v, attr, line_no)?);
                continue;
            }
            match &attr.kind {
                AttrType::Numeric => {
                    if v == "?" {
                        frow.push(None);
                    } else {
                        let x: f64 = v.parse().map_err(|_| DosaError::Parse {
                            line: line_no,
                            message: format!("'{v}' is not numeric (attribute '{}')", attr.name),
                        })?;
                        if !x.is_finite() {
                            return Err(DosaError::Parse {
                                line: line_no,
                                message: format!("non-finite value for '{}'", attr.name),
                            });
                        }
                        frow.push(Some(x));
                    }
                }
                AttrType::Nominal(values) => {
                    let idx = if v == "?" {
                        None
                    } else {
                        Some(values.iter().position(|x| x == v).ok_or_else(|| DosaError::Parse {
                            line: line_no,
                            message: format!("'{v}' is not a declared value of '{}'", attr.name),
                        })?)
                    };
                    match desc.nominal {
                        NominalEncoding::Integer => frow.push(idx.map(|i| i as f64)),
                        NominalEncoding::OneHot => {
                            for k in 0..values.len() {
                                frow.push(idx.map(|i| if i == k { 1.0 } else { 0.0 }));
                            }
                        }
                    }
                }
            }
        }
        feature_rows.push(frow);
        label_rows.push(lrow);
    }

    let layout = layout.ok_or_else(|| DosaError::Parse {
        line: text.lines().count(),
        message: "no @data section".into(),
    })?;
    if feature_rows.is_empty() {
        return Err(DosaError::Parse {
            line: text.lines().count(),
            message: "no data rows".into(),
        });
    }
    let name = if desc.name.is_empty() {
        relation.unwrap_or_default()
    } else {
        desc.name.clone()
    };
    MultiLabelDataset::from_optional_rows(
        name,
        feature_rows,
        label_rows,
        layout.feature_names,
        layout.label_names,
    )
}

struct Layout {
    is_label: Vec<bool>,
    feature_names: Vec<String>,
    label_names: Vec<String>,
    feature_width: usize,
}

impl Layout {
    fn new(attrs: &[Attribute], desc: &DatasetDescriptor, line_no: usize) -> Result<Self> {
        let q = desc.label_count;
        if q == 0 || q >= attrs.len() {
            return Err(DosaError::Parse {
                line: line_no,
                message: format!(
                    "label_count {q} is incompatible with {} attributes",
                    attrs.len()
                ),
            });
        }
        let is_label: Vec<bool> = (0..attrs.len())
            .map(|i| match desc.label_position {
                LabelPosition::Trailing => i >= attrs.len() - q,
                LabelPosition::Leading => i < q,
            })
            .collect();
        let mut feature_names = Vec::new();
        let mut label_names = Vec::new();
        for (a, attr) in attrs.iter().enumerate() {
            if is_label[a] {
                label_names.push(attr.name.clone());
                continue;
            }
            match (&attr.kind, desc.nominal) {
                (AttrType::Nominal(values), NominalEncoding::OneHot) => {
                    feature_names.extend(values.iter().map(|v| format!("{}={v}", attr.name)));
                }
                _ => feature_names.push(attr.name.clone()),
            }
        }
        Ok(Self {
            feature_width: feature_names.len(),
            is_label,
            feature_names,
            label_names,
        })
    }
}
