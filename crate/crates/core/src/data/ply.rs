//! ASCII PLY subset: one `vertex` element with `x y z` and `f0..f{k-1}`.
//! 2D clouds store z = 0 and carry a `comment dim=2` header line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn save_cloud(p: &PointCloud, path: &Path) -> Result<()> {
    let k = p.num_features();
    let mut out = String::with_capacity(p.len() * (3 + k) * 20 + 200);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "comment dim={}", p.dim());
    let _ = writeln!(out, "element vertex {}", p.len());
    for axis in ["x", "y", "z"] {
        let _ = writeln!(out, "property double {axis}");
    }
    for c in 0..k {
        let _ = writeln!(out, "property double f{c}");
    }
    out.push_str("end_header\n");
    for i in 0..p.len() {
        let pt = p.point(i);
        let z = if p.dim() == 3 { pt[2] } else { 0.0 };
        // `{:?}` on f64 is the shortest representation that round-trips.
        let _ = write!(out, "{:?} {:?} {:?}", pt[0], pt[1], z);
        for v in p.point_features(i) {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, msg: String| Error::format(path, line, msg);

    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(bad(1, "missing 'ply' magic".into())),
    }
    let mut dim = 3;
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("ascii") {
                    return Err(bad(ln, "only ascii PLY is supported".into()));
                }
            }
            Some("comment") => {
                if let Some(d) = words.next().and_then(|w| w.strip_prefix("dim=")) {
                    dim = d.parse().map_err(|_| bad(ln, format!("bad dim comment '{d}'")))?;
                    if dim != 2 && dim != 3 {
                        return Err(bad(ln, format!("dim must be 2 or 3, got {dim}")));
                    }
                }
            }
            Some("element") => {
                if words.next() != Some("vertex") || count.is_some() {
                    return Err(bad(ln, "expected a single 'element vertex'".into()));
                }
                let n = words.next().and_then(|w| w.parse().ok());
                count = Some(n.ok_or_else(|| bad(ln, "bad vertex count".into()))?);
            }
            Some("property") => {
                let ty = words.next().unwrap_or("");
                if !matches!(ty, "float" | "double" | "float32" | "float64") {
                    return Err(bad(ln, format!("unsupported property type '{ty}'")));
                }
                let name = words.next().ok_or_else(|| bad(ln, "property without a name".into()))?;
                props.push(name.to_string());
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some("obj_info") | None => {}
            Some(other) => return Err(bad(ln, format!("unexpected header keyword '{other}'"))),
        }
    }
    if !header_done {
        return Err(bad(0, "missing end_header".into()));
    }
    let n = count.ok_or_else(|| bad(0, "missing 'element vertex'".into()))?;
    if props.len() < 3 || props[0] != "x" || props[1] != "y" || props[2] != "z" {
        return Err(bad(0, "properties must start with x, y, z".into()));
    }
    let k = props.len() - 3;
    for (c, name) in props[3..].iter().enumerate() {
        if *name != format!("f{c}") {
            return Err(bad(0, format!("expected property f{c}, found {name}")));
        }
    }

    let mut coords = Vec::with_capacity(n * dim);
    let mut features = Vec::with_capacity(n * k);
    let mut row = 0;
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        if row == n {
            return Err(bad(ln, format!("more than {n} vertex rows")));
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(ln, format!("row {row}: {e}")))?;
        if values.len() != 3 + k {
            return Err(bad(ln, format!("row {row}: expected {} values, got {}", 3 + k, values.len())));
        }
        if let Some(c) = values.iter().position(|v| !v.is_finite()) {
            return Err(bad(ln, format!("row {row}: non-finite value in column {}", props[c])));
        }
        coords.extend_from_slice(&values[..dim]);
        features.extend_from_slice(&values[3..]);
        row += 1;
    }
    if row != n {
        return Err(bad(0, format!("expected {n} vertex rows, found {row}")));
    }
    PointCloud::with_features(dim, coords, k, features)
}
