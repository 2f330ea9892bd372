//! Landmark files: `version: 1`, `n_points: N`, `{`, one `x y` line per
//! point, `}`.

use far_core::shapewarp::Shape;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PtsError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: n_points declares {declared} points but the file lists {found}")]
    Count {
        line: usize,
        declared: usize,
        found: usize,
    },
    #[error("invalid shape: {0}")]
    Shape(String),
}

fn syntax(line: usize, message: impl Into<String>) -> PtsError {
    PtsError::Syntax {
        line,
        message: message.into(),
    }
}

pub fn parse_pts(bytes: &[u8]) -> Result<Shape, PtsError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = 1 + bytes[..e.valid_up_to()]
            .iter()
            .filter(|b| **b == b'\n')
            .count();
        syntax(line, "file is not valid UTF-8")
    })?;
    let mut lines = text
        .lines()
        .map(str::trim)
        .enumerate()
        .map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| {
            syntax(
                text.lines().count() + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    };

    let (n, l) = next("version header")?;
    if l != "version: 1" {
        return Err(syntax(n, format!("expected \"version: 1\", found {l:?}")));
    }
    let (n, l) = next("n_points header")?;
    let declared: usize = l
        .strip_prefix("n_points:")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| syntax(n, format!("expected \"n_points: <count>\", found {l:?}")))?;
    let (n, l) = next("\"{\"")?;
    if l != "{" {
        return Err(syntax(n, format!("expected \"{{\", found {l:?}")));
    }

    let mut points = Vec::with_capacity(declared);
    loop {
        let (n, l) = next("\"}\"")?;
        if l == "}" {
            if points.len() != declared {
                return Err(PtsError::Count {
                    line: n,
                    declared,
                    found: points.len(),
                });
            }
            break;
        }
        let mut fields = l.split_whitespace().map(str::parse::<f64>);
        match (fields.next(), fields.next(), fields.next()) {
            (Some(Ok(x)), Some(Ok(y)), None) if x.is_finite() && y.is_finite() => {
                points.push([x, y])
            }
            _ => {
                return Err(syntax(
                    n,
                    format!("expected two finite coordinates, found {l:?}"),
                ))
            }
        }
        if points.len() > declared {
            return Err(PtsError::Count {
                line: n,
                declared,
                found: points.len(),
            });
        }
    }
    if let Some((n, l)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(syntax(n, format!("trailing content after \"}}\": {l:?}")));
    }
    Shape::from_xy(&points).map_err(|e| PtsError::Shape(e.to_string()))
}

pub fn write_pts(shape: &Shape) -> Vec<u8> {
    let mut s = format!("version: 1\nn_points: {}\n{{\n", shape.len());
    for p in &shape.points {
        s.push_str(&format!("{:.6} {:.6}\n", p.x, p.y));
    }
    s.push_str("}\n");
    s.into_bytes()
}
