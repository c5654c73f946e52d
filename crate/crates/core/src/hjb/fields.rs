use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::hjb::grid::{Axis, GridSpec, Substeps};
use crate::sde::Control;

/// Which scalar a [`ValueField`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// `J = −ε log g`, from the nonlinear equation.
    Value,
    /// Exit probability `q`, from the linear equation.
    ExitProbability,
}

impl FieldKind {
    fn tag(self) -> &'static str {
        match self {
            FieldKind::Value => "J",
            FieldKind::ExitProbability => "q",
        }
    }
}

/// Scalar field on all `M + 1` time slices of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub kind: FieldKind,
    pub model: String,
    pub eps: f64,
    pub scheme: String,
    pub grid: GridSpec,
    /// Slice-major values: `values[k * n_nodes + node]`.
    pub values: Vec<f64>,
    /// Nodes holding boundary data on every slice.
    pub dirichlet: Vec<bool>,
    /// Boundary nodes where the drift is tangential (`⟨f, n⟩ = 0`).
    pub characteristic_nodes: usize,
    pub notes: Vec<String>,
}

impl ValueField {
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.grid.n_nodes() + node]
    }

    /// Multilinear interpolation in space on the nearest slice.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> f64 {
        let k = self.grid.nearest_slice(t);
        let slice = self.slice(k);
        let mut acc = 0.0;
        for_each_corner(&self.grid, x, |node, w| acc += w * slice[node]);
        acc
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write_header(out, self.kind.tag(), &self.model, self.eps, &self.grid)?;
        writeln!(out, "# scheme={}", self.scheme)?;
        writeln!(out, "{},value", index_columns(self.grid.dim()))?;
        let n = self.grid.n_nodes();
        for k in 0..self.grid.n_slices() {
            for node in 0..n {
                writeln!(out, "{},{:e}", index_cells(&self.grid, k, node), self.values[k * n + node])?;
            }
        }
        Ok(())
    }
}

/// Tilting control `v` on the grid, with per-node clamp flags.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub model: String,
    pub eps: f64,
    pub d: usize,
    pub cap: f64,
    pub grid: GridSpec,
    /// `values[(k * n_nodes + node) * d + c]`.
    pub values: Vec<f64>,
    /// Whether the cap shaped the value at `(k, node)`.
    pub clamped: Vec<bool>,
}

impl ControlField {
    pub const INTERPOLATION: &'static str = "multilinear-space/nearest-time";

    pub fn node_value(&self, k: usize, node: usize) -> &[f64] {
        let base = (k * self.grid.n_nodes() + node) * self.d;
        &self.values[base..base + self.d]
    }

    pub fn clamped_nodes(&self) -> usize {
        self.clamped.iter().filter(|&&c| c).count()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        write_header(out, "v", &self.model, self.eps, &self.grid)?;
        writeln!(out, "# d={}", self.d)?;
        writeln!(out, "# cap={:e}", self.cap)?;
        writeln!(out, "# interpolation={}", Self::INTERPOLATION)?;
        let vcols: Vec<String> = (1..=self.d).map(|c| format!("v_{c}")).collect();
        writeln!(out, "{},{},clamped", index_columns(self.grid.dim()), vcols.join(","))?;
        let n = self.grid.n_nodes();
        for k in 0..self.grid.n_slices() {
            for node in 0..n {
                let vals: Vec<String> = self.node_value(k, node).iter().map(|v| format!("{v:e}")).collect();
                writeln!(
                    out,
                    "{},{},{}",
                    index_cells(&self.grid, k, node),
                    vals.join(","),
                    self.clamped[k * n + node] as u8
                )?;
            }
        }
        Ok(())
    }

    /// Parses a field written by [`ControlField::write_csv`].
    pub fn read_csv(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut lines = text.lines().enumerate().peekable();
        while let Some((_, l)) = lines.peek() {
            match l.strip_prefix('#') {
                Some(rest) => {
                    meta.push(rest.trim().to_string());
                    lines.next();
                }
                None => break,
            }
        }
        let get = |key: &str| -> Result<String> {
            meta.iter()
                .find_map(|m| m.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| Error::Parse {
                    line: 1,
                    message: format!("missing metadata `{key}`"),
                })
        };
        if get("field")? != "v" {
            return Err(Error::Parse {
                line: 1,
                message: "not a control field".into(),
            });
        }
        let model = get("model")?;
        let eps: f64 = parse_meta(&get("eps")?, "eps")?;
        let d: usize = parse_meta(&get("d")?, "d")?;
        let cap: f64 = parse_meta(&get("cap")?, "cap")?;
        let dims: usize = parse_meta(&get("dims")?, "dims")?;
        let tw: Vec<f64> = get("time_window")?
            .split(',')
            .map(|s| parse_meta(s, "time_window"))
            .collect::<Result<_>>()?;
        if tw.len() != 2 {
            return Err(Error::Parse {
                line: 1,
                message: "malformed time_window metadata".into(),
            });
        }
        let time_steps: usize = parse_meta(&get("time_steps")?, "time_steps")?;
        let mut axes = Vec::with_capacity(dims);
        for k in 0..dims {
            let parts: Vec<String> = get(&format!("axis{k}"))?.split(',').map(str::to_string).collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("malformed axis{k} metadata"),
                });
            }
            axes.push(Axis {
                lo: parse_meta(&parts[0], "axis lo")?,
                hi: parse_meta(&parts[1], "axis hi")?,
                points: parse_meta(&parts[2], "axis points")?,
            });
        }
        let bounds: Vec<(f64, f64)> = axes.iter().map(|a| (a.lo, a.hi)).collect();
        let points: Vec<usize> = axes.iter().map(|a| a.points).collect();
        let mut grid = GridSpec::new(&bounds, &points, (tw[0], tw[1]), time_steps)
            .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if let Ok(k) = get("substeps") {
            grid.substeps = Substeps::Fixed(parse_meta(&k, "substeps")?);
        }

        // column header
        let mut last_line = meta.len();
        match lines.next() {
            Some((i, _)) => last_line = i + 1,
            None => {
                return Err(Error::Parse {
                    line: last_line + 1,
                    message: "missing column header".into(),
                })
            }
        }
        let n = grid.n_nodes();
        let rows = grid.n_slices() * n;
        let mut values = Vec::with_capacity(rows * d);
        let mut clamped = Vec::with_capacity(rows);
        let ncols = 1 + dims + d + 1;
        for expected in 0..rows {
            let (i, line) = lines.next().ok_or_else(|| Error::Parse {
                line: last_line + 1,
                message: format!("truncated field: expected {rows} rows, found {expected}"),
            })?;
            last_line = i + 1;
            let cells: Vec<&str> = line.split(',').collect();
            let bad = |m: String| Error::Parse { line: i + 1, message: m };
            if cells.len() != ncols {
                return Err(bad(format!("expected {ncols} columns, found {}", cells.len())));
            }
            let k: usize = cells[0].parse().map_err(|_| bad(format!("bad t_index `{}`", cells[0])))?;
            let multi: Vec<usize> = cells[1..=dims]
                .iter()
                .map(|c| c.parse().map_err(|_| bad(format!("bad node index `{c}`"))))
                .collect::<Result<_>>()?;
            if k * n + grid.linear_index(&multi) != expected {
                return Err(bad("rows out of order".into()));
            }
            for c in &cells[1 + dims..1 + dims + d] {
                values.push(c.parse::<f64>().map_err(|_| bad(format!("bad value `{c}`")))?);
            }
            clamped.push(match cells[ncols - 1] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("bad clamp flag `{other}`"))),
            });
        }
        if let Some((i, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::Parse {
                line: i + 1,
                message: "trailing rows after the last slice".into(),
            });
        }
        Ok(Self {
            model,
            eps,
            d,
            cap,
            grid,
            values,
            clamped,
        })
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(&fs::read_to_string(path)?)
    }
}

impl Control for ControlField {
    fn dim(&self) -> usize {
        self.d
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) -> bool {
        let k = self.grid.nearest_slice(t);
        let n = self.grid.n_nodes();
        out.fill(0.0);
        let mut clamped = false;
        for_each_corner(&self.grid, x, |node, w| {
            let base = (k * n + node) * self.d;
            for c in 0..self.d {
                out[c] += w * self.values[base + c];
            }
            clamped |= self.clamped[k * n + node];
        });
        clamped
    }
}

/// Loads a cached control and checks it against the requested model, ε and grid.
pub fn cache_control(path: &Path, model: &str, eps: f64, grid: &GridSpec) -> Result<ControlField> {
    let field = ControlField::read_csv_file(path)?;
    if field.model != model {
        return Err(Error::CacheInvalid(format!(
            "field was solved for model `{}`, requested `{model}`",
            field.model
        )));
    }
    if field.eps != eps {
        return Err(Error::CacheInvalid(format!(
            "field was solved at eps={}, requested eps={eps}",
            field.eps
        )));
    }
    if !field.grid.same_shape(grid) {
        return Err(Error::CacheInvalid("grid metadata differs from the requested grid".into()));
    }
    Ok(field)
}

/// Calls `f(node, weight)` for each corner of the cell containing `x`
/// (corners with zero weight are skipped).
pub(crate) fn for_each_corner(grid: &GridSpec, x: &[f64], mut f: impl FnMut(usize, f64)) {
    let dim = grid.dim();
    let mut cells = [0usize; 3];
    let mut w = [0.0f64; 3];
    debug_assert!(dim <= 3);
    grid.locate(x, &mut cells[..dim], &mut w[..dim]);
    let strides = grid.strides();
    let base: usize = (0..dim).map(|k| cells[k] * strides[k]).sum();
    for mask in 0..(1usize << dim) {
        let mut weight = 1.0;
        let mut node = base;
        for k in 0..dim {
            if mask >> k & 1 == 1 {
                weight *= w[k];
                node += strides[k];
            } else {
                weight *= 1.0 - w[k];
            }
        }
        if weight > 0.0 {
            f(node, weight);
        }
    }
}

fn write_header<W: Write>(out: &mut W, field: &str, model: &str, eps: f64, grid: &GridSpec) -> Result<()> {
    writeln!(out, "# field={field}")?;
    writeln!(out, "# model={model}")?;
    writeln!(out, "# eps={eps:e}")?;
    writeln!(out, "# dims={}", grid.dim())?;
    for (k, a) in grid.axes.iter().enumerate() {
        writeln!(out, "# axis{k}={:e},{:e},{}", a.lo, a.hi, a.points)?;
    }
    writeln!(out, "# time_window={:e},{:e}", grid.time_window.0, grid.time_window.1)?;
    writeln!(out, "# time_steps={}", grid.time_steps)?;
    if let Substeps::Fixed(k) = grid.substeps {
        writeln!(out, "# substeps={k}")?;
    }
    Ok(())
}

fn index_columns(dim: usize) -> String {
    let idx: Vec<String> = (1..=dim).map(|k| format!("i_{k}")).collect();
    format!("t_index,{}", idx.join(","))
}

fn index_cells(grid: &GridSpec, k: usize, node: usize) -> String {
    let multi: Vec<String> = grid.multi_index(node).iter().map(usize::to_string).collect();
    format!("{k},{}", multi.join(","))
}

fn parse_meta<T: FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line: 1,
        message: format!("bad `{what}` metadata `{s}`"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> ControlField {
        let grid = GridSpec::new(&[(-1.0, 1.0)], &[5], (0.0, 1.0), 2).unwrap();
        let n = grid.n_nodes();
        let values: Vec<f64> = (0..3 * n).map(|i| 0.1 * i as f64 - 0.7 + 1.0 / 3.0).collect();
        let clamped = (0..3 * n).map(|i| i % 4 == 0).collect();
        ControlField {
            model: "free-bm-1".into(),
            eps: 0.5,
            d: 1,
            cap: 10.0,
            grid,
            values,
            clamped,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let f = field();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ControlField::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncated_file_reports_line() {
        let f = field();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let keep: Vec<&str> = text.lines().take(text.lines().count() - 3).collect();
        match ControlField::read_csv(&keep.join("\n")) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, keep.len() + 1);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn corrupt_value_reports_its_line() {
        let f = field();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let target = lines.len() - 2;
        lines[target] = "2,3,zz,0".into();
        match ControlField::read_csv(&lines.join("\n")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, target + 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn interpolation_and_clamp_flag() {
        let f = field();
        let mut out = [0.0];
        // slice 0, between nodes 1 (x=-0.5) and 2 (x=0)
        let clamped = f.eval(0.1, &[-0.25], &mut out);
        let expect = 0.5 * (f.node_value(0, 1)[0] + f.node_value(0, 2)[0]);
        assert!((out[0] - expect).abs() < 1e-15);
        assert!(!clamped);
        // exactly on node 0, which is flagged
        assert!(f.eval(0.0, &[-1.0], &mut out));
        assert_eq!(out[0], f.node_value(0, 0)[0]);
    }

    #[test]
    fn cache_guards_metadata() {
        let f = field();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let mut file = fs::File::create(&path).unwrap();
        f.write_csv(&mut file).unwrap();
        drop(file);
        assert_eq!(cache_control(&path, "free-bm-1", 0.5, &f.grid).unwrap(), f);
        assert!(matches!(
            cache_control(&path, "free-bm-1", 0.25, &f.grid),
            Err(Error::CacheInvalid(_))
        ));
        assert!(matches!(
            cache_control(&path, "ou-chain-2x1", 0.5, &f.grid),
            Err(Error::CacheInvalid(_))
        ));
    }
}
