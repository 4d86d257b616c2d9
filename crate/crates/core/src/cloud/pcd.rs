//! ASCII PCD reader/writer.
//!
//! Supported subset: `FIELDS x y z` with an optional integer `view` column,
//! `DATA ascii`. `VIEWPOINT` sets the origin of view 0. Per-view origins for
//! multi-view files are carried in `# VIEW_ORIGIN <id> <x> <y> <z>` comments.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{PointCloud, ViewId, ViewSet};
use crate::error::{Error, Result};

pub fn read_file(path: &Path, default_origin: Vector3<f64>) -> Result<PointCloud> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read(BufReader::new(f), default_origin)
}

#[derive(Default)]
struct Header {
    version: bool,
    fields: Option<Vec<String>>,
    size: bool,
    ty: bool,
    count: bool,
    width: Option<usize>,
    height: Option<usize>,
    points: Option<usize>,
    viewpoint: Option<Vector3<f64>>,
}

fn perr(line: usize, msg: impl Into<String>) -> Error {
    Error::Pcd {
        line,
        msg: msg.into(),
    }
}

pub fn read<R: BufRead>(r: R, default_origin: Vector3<f64>) -> Result<PointCloud> {
    let mut header = Header::default();
    let mut origins: BTreeMap<ViewId, Vector3<f64>> = BTreeMap::new();
    let mut lines = r.lines().enumerate();
    let mut data_line = 0;

    for (i, line) in lines.by_ref() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<pcd>", e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            let toks: Vec<&str> = c.split_whitespace().collect();
            if toks.first() == Some(&"VIEW_ORIGIN") {
                if toks.len() != 5 {
                    return Err(perr(lineno, "VIEW_ORIGIN needs an id and 3 coordinates"));
                }
                let id: ViewId = toks[1].parse().map_err(|_| perr(lineno, "bad view id"))?;
                let v = parse_vec3(&toks[2..5]).ok_or_else(|| perr(lineno, "bad origin"))?;
                origins.insert(id, v);
            }
            continue;
        }
        let mut toks = t.split_whitespace();
        let key = toks.next().unwrap_or_default();
        let rest: Vec<&str> = toks.collect();
        match key {
            "VERSION" => header.version = true,
            "FIELDS" => header.fields = Some(rest.iter().map(|s| s.to_string()).collect()),
            "SIZE" => header.size = true,
            "TYPE" => header.ty = true,
            "COUNT" => header.count = true,
            "WIDTH" => header.width = Some(parse_usize(&rest, lineno, "WIDTH")?),
            "HEIGHT" => header.height = Some(parse_usize(&rest, lineno, "HEIGHT")?),
            "POINTS" => header.points = Some(parse_usize(&rest, lineno, "POINTS")?),
            "VIEWPOINT" => {
                if rest.len() < 3 {
                    return Err(perr(lineno, "VIEWPOINT needs at least 3 values"));
                }
                header.viewpoint =
                    Some(parse_vec3(&rest[..3]).ok_or_else(|| perr(lineno, "bad VIEWPOINT"))?);
            }
            "DATA" => {
                if rest.first() != Some(&"ascii") {
                    return Err(perr(lineno, "only DATA ascii is supported"));
                }
                data_line = lineno;
                break;
            }
            other => return Err(perr(lineno, format!("unknown header field {other}"))),
        }
    }
    if data_line == 0 {
        return Err(perr(0, "missing DATA line"));
    }
    for (present, name) in [
        (header.version, "VERSION"),
        (header.size, "SIZE"),
        (header.ty, "TYPE"),
        (header.count, "COUNT"),
    ] {
        if !present {
            return Err(perr(data_line, format!("missing {name}")));
        }
    }
    let fields = header
        .fields
        .ok_or_else(|| perr(data_line, "missing FIELDS"))?;
    let npoints = header
        .points
        .ok_or_else(|| perr(data_line, "missing POINTS"))?;
    let width = header.width.ok_or_else(|| perr(data_line, "missing WIDTH"))?;
    let height = header.height.ok_or_else(|| perr(data_line, "missing HEIGHT"))?;
    if width * height != npoints {
        return Err(perr(data_line, "WIDTH * HEIGHT differs from POINTS"));
    }
    let col = |name: &str| fields.iter().position(|f| f == name);
    let (xi, yi, zi) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(perr(data_line, "FIELDS must include x y z")),
    };
    let vi = col("view");

    // Explicit per-view origins take precedence over VIEWPOINT.
    if let Some(vp) = header.viewpoint.filter(|_| origins.is_empty()) {
        origins.insert(0, vp);
    }

    let mut cloud = PointCloud::default();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io("<pcd>", e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() != fields.len() {
            return Err(perr(
                lineno,
                format!("expected {} values, found {}", fields.len(), toks.len()),
            ));
        }
        let num = |k: usize| -> Result<f64> {
            let v: f64 = toks[k]
                .parse()
                .map_err(|_| perr(lineno, format!("bad number {:?}", toks[k])))?;
            if !v.is_finite() {
                return Err(perr(lineno, "non-finite coordinate"));
            }
            Ok(v)
        };
        let p = Vector3::new(num(xi)?, num(yi)?, num(zi)?);
        let view: ViewId = match vi {
            Some(k) => toks[k]
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as ViewId)
                .ok_or_else(|| perr(lineno, "bad view id"))?,
            None => 0,
        };
        if cloud.len() == npoints {
            return Err(perr(lineno, format!("more data rows than POINTS {npoints}")));
        }
        cloud.points.push(p);
        cloud.views.push(ViewSet::single(view));
        origins.entry(view).or_insert(default_origin);
    }
    if cloud.len() != npoints {
        return Err(perr(
            data_line,
            format!("POINTS declares {npoints} but {} rows found", cloud.len()),
        ));
    }
    if cloud.is_empty() && origins.is_empty() {
        origins.insert(0, default_origin);
    }
    cloud.view_origins = origins;
    Ok(cloud)
}

fn parse_usize(rest: &[&str], line: usize, name: &str) -> Result<usize> {
    rest.first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| perr(line, format!("invalid {name}")))
}

fn parse_vec3(t: &[&str]) -> Option<Vector3<f64>> {
    let v: Vec<f64> = t.iter().map(|s| s.parse().ok()).collect::<Option<_>>()?;
    Some(Vector3::new(v[0], v[1], v[2]))
}

/// Writes the cloud as ASCII PCD with a `view` column (first view id of
/// each point).
pub fn write<W: Write>(c: &PointCloud, mut w: W) -> std::io::Result<()> {
    writeln!(w, "# .PCD v0.7 - Point Cloud Data file format")?;
    for (id, o) in &c.view_origins {
        writeln!(w, "# VIEW_ORIGIN {id} {:?} {:?} {:?}", o.x, o.y, o.z)?;
    }
    writeln!(w, "VERSION 0.7")?;
    writeln!(w, "FIELDS x y z view")?;
    writeln!(w, "SIZE 8 8 8 4")?;
    writeln!(w, "TYPE F F F U")?;
    writeln!(w, "COUNT 1 1 1 1")?;
    writeln!(w, "WIDTH {}", c.len())?;
    writeln!(w, "HEIGHT 1")?;
    let vp = c.view_origins.get(&0).copied().unwrap_or_else(Vector3::zeros);
    writeln!(w, "VIEWPOINT {:?} {:?} {:?} 1 0 0 0", vp.x, vp.y, vp.z)?;
    writeln!(w, "POINTS {}", c.len())?;
    writeln!(w, "DATA ascii")?;
    for (p, vs) in c.points.iter().zip(&c.views) {
        writeln!(w, "{:?} {:?} {:?} {}", p.x, p.y, p.z, vs.first().unwrap_or(0))?;
    }
    Ok(())
}
