//! CSV and JSON emission, run manifests and per-run output directories.
//!
//! Floats are written with 17 significant digits so every CSV value parses
//! back to the same double.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::planar::{ExtremalArc, Front};
use crate::pmp::{trajectory_rows, Trajectory};
use crate::probe::{GridField, NodeStatus, ProbeReport};
use crate::singular::{SingularPoint, SingularReport, StratumSample};

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(v: &[f64], sep: &str) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(sep)
}

/// A table with optional `#` comment lines above the header.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Table {
        Table { comments: vec![], header: header.into_iter().map(Into::into).collect(), rows: vec![] }
    }

    pub fn render(&self) -> Result<String> {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str("# ");
            out.push_str(c);
            out.push('\n');
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(vec![]);
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Invalid(e.to_string()))?;
        out.push_str(std::str::from_utf8(&bytes).expect("csv output is utf-8"));
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Table> {
        let mut comments = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            match line.strip_prefix('#') {
                Some(c) => comments.push(c.trim_start().to_string()),
                None => {
                    body.push_str(line);
                    body.push('\n');
                }
            }
        }
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(csv_err))
            .collect::<Result<Vec<Vec<String>>>>()?;
        Ok(Table { comments, header, rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn axis_header(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

fn status_name(s: NodeStatus) -> &'static str {
    match s {
        NodeStatus::Ok => "ok",
        NodeStatus::Failed => "failed",
    }
}

pub fn grid_table(field: &GridField) -> Table {
    let n = field.dim();
    let mut t = Table::new(axis_header("x", n).chain(["T".to_string(), "status".to_string()]));
    t.comments = vec![
        format!("lo: {}", join(&field.lo, ",")),
        format!("hi: {}", join(&field.hi, ",")),
        format!("res: {}", field.res.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        format!("solver: {}", field.solver),
        format!("tol: {}", num(field.tol)),
    ];
    for k in 0..field.len() {
        let mut row: Vec<String> = field.coords(k).iter().map(|v| num(*v)).collect();
        row.push(num(field.values[k]));
        row.push(status_name(field.status[k]).into());
        t.rows.push(row);
    }
    t
}

pub fn parse_grid(text: &str) -> Result<GridField> {
    let t = Table::parse(text)?;
    let meta: BTreeMap<&str, &str> = t.comments.iter().filter_map(|c| c.split_once(": ")).collect();
    let get = |k: &str| meta.get(k).copied().ok_or_else(|| Error::Invalid(format!("grid file lacks '# {k}:'")));
    let floats = |s: &str| -> Result<Vec<f64>> {
        s.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| Error::Invalid(format!("'{v}': {e}")))).collect()
    };
    let lo = floats(get("lo")?)?;
    let hi = floats(get("hi")?)?;
    let res = get("res")?
        .split(',')
        .map(|v| v.trim().parse::<usize>().map_err(|e| Error::Invalid(format!("'{v}': {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let n = lo.len();
    let mut values = Vec::with_capacity(t.rows.len());
    let mut status = Vec::with_capacity(t.rows.len());
    for row in &t.rows {
        if row.len() != n + 2 {
            return Err(Error::Invalid(format!("grid row has {} fields, expected {}", row.len(), n + 2)));
        }
        values.push(row[n].parse::<f64>().map_err(|e| Error::Invalid(format!("'{}': {e}", row[n])))?);
        status.push(match row[n + 1].as_str() {
            "ok" => NodeStatus::Ok,
            "failed" => NodeStatus::Failed,
            other => return Err(Error::Invalid(format!("unknown node status '{other}'"))),
        });
    }
    let field = GridField {
        lo,
        hi,
        res,
        values,
        status,
        solver: get("solver")?.to_string(),
        tol: floats(get("tol")?)?[0],
    };
    if field.res.iter().product::<usize>() != field.values.len() {
        return Err(Error::Invalid("grid row count does not match the resolution".into()));
    }
    Ok(field)
}

pub fn probe_table(field: &GridField, report: &ProbeReport) -> Table {
    let n = field.dim();
    let q = report.radii.len();
    let mut t = Table::new(
        axis_header("x", n)
            .chain(["T".to_string()])
            .chain((1..=q).map(|i| format!("quotient_{i}")))
            .chain(["label".to_string()]),
    );
    t.comments = vec![
        format!("radii: {}", join(&report.radii, ",")),
        format!("gamma: {}", num(report.thresholds.gamma)),
        format!("gamma_lip: {}", num(report.thresholds.gamma_lip)),
        format!("note: {}", report.note),
    ];
    for k in 0..field.len() {
        let mut row: Vec<String> = field.coords(k).iter().map(|v| num(*v)).collect();
        row.push(num(field.values[k]));
        row.extend(report.quotients[k].iter().map(|v| v.map_or_else(String::new, num)));
        let label = serde_json::to_value(report.labels[k]).expect("label serializes");
        row.push(label.as_str().unwrap_or_default().to_string());
        t.rows.push(row);
    }
    t
}

pub fn singular_table(points: &[SingularPoint], reports: &[SingularReport]) -> Table {
    let n = points.first().map_or(0, |p| p.x.len());
    let mut t = Table::new(
        axis_header("x", n)
            .chain(["r".to_string()])
            .chain(axis_header("zeta", n))
            .chain(["j_vector", "d", "branch", "residual_h", "residual_boundary"].map(String::from)),
    );
    for (p, rep) in points.iter().zip(reports) {
        let mut row: Vec<String> = p.x.iter().map(|v| num(*v)).collect();
        row.push(num(p.r));
        row.extend(p.zeta.iter().map(|v| num(*v)));
        row.push(p.j.iter().map(usize::to_string).collect::<Vec<_>>().join(";"));
        row.push(p.d.to_string());
        row.push(p.branch.to_string());
        row.push(num(rep.residual_h));
        row.push(num(rep.residual_boundary));
        t.rows.push(row);
    }
    t
}

/// One row per point: `switch_times` joins channels with `|` and times with `;`.
pub fn strata_table(strata: &[StratumSample]) -> Table {
    let n = strata.iter().find_map(|s| s.points.first()).map_or(0, |p| p.x.len());
    let mut t = Table::new(
        ["tau", "label", "branch"]
            .map(String::from)
            .into_iter()
            .chain(axis_header("x", n))
            .chain(["switch_times", "rank"].map(String::from)),
    );
    for s in strata {
        for (k, p) in s.points.iter().enumerate() {
            let mut row = vec![num(s.tau), s.label.to_string(), p.branch.to_string()];
            row.extend(p.x.iter().map(|v| num(*v)));
            row.push(s.switch_times[k].iter().map(|c| join(c, ";")).collect::<Vec<_>>().join("|"));
            row.push(s.ranks[k].to_string());
            t.rows.push(row);
        }
    }
    t
}

pub fn trajectory_table(traj: &Trajectory) -> Table {
    let (header, rows) = trajectory_rows(traj);
    let mut t = Table::new(header);
    t.rows = rows.iter().map(|r| r.iter().map(|v| num(*v)).collect()).collect();
    t
}

pub fn arc_table(arc: &ExtremalArc) -> Table {
    let m = arc.u.first().map_or(0, Vec::len);
    let mut t = Table::new(
        ["t", "x_1", "x_2"]
            .map(String::from)
            .into_iter()
            .chain(axis_header("u", m))
            .chain(["lambda_1", "lambda_2"].map(String::from))
            .chain(axis_header("g", m))
            .chain(["h".to_string()]),
    );
    for k in 0..arc.len() {
        let mut row = vec![num(arc.t[k]), num(arc.x[k][0]), num(arc.x[k][1])];
        row.extend(arc.u[k].iter().map(|v| num(*v)));
        row.push(num(arc.lambda[k][0]));
        row.push(num(arc.lambda[k][1]));
        row.extend(arc.g[k].iter().map(|v| num(*v)));
        row.push(num(arc.h[k]));
        t.rows.push(row);
    }
    t
}

pub fn front_table(front: &Front) -> Table {
    let mut t = Table::new(["r", "x_1", "x_2"]);
    t.comments = front.warnings.clone();
    t.rows = front.points.iter().map(|p| vec![num(front.r), num(p[0]), num(p[1])]).collect();
    t
}

/// Record of one CLI run. The directory key hashes everything except the
/// output list and the wall time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, Value>,
    pub seed: u64,
    pub tolerances: BTreeMap<String, f64>,
    pub system: String,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

impl RunManifest {
    pub fn new(command: &str, system: &str, seed: u64) -> RunManifest {
        RunManifest {
            command: command.into(),
            parameters: BTreeMap::new(),
            seed,
            tolerances: BTreeMap::new(),
            system: system.into(),
            outputs: vec![],
            wall_time_s: 0.0,
        }
    }

    pub fn param(&mut self, key: &str, v: impl Serialize) -> &mut Self {
        self.parameters.insert(key.into(), serde_json::to_value(v).expect("parameter serializes"));
        self
    }

    pub fn tolerance(&mut self, key: &str, v: f64) -> &mut Self {
        self.tolerances.insert(key.into(), v);
        self
    }

    /// First 16 hex digits of the SHA-256 of the canonical key fields.
    pub fn key(&self) -> String {
        let canon = serde_json::json!({
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.seed,
            "tolerances": self.tolerances,
            "system": self.system,
        });
        let digest = Sha256::digest(canon.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Writes `files` and `manifest.json` into `base/<manifest key>`.
pub fn write_run(base: &Path, manifest: &mut RunManifest, files: &[(String, String)]) -> Result<PathBuf> {
    let dir = base.join(manifest.key());
    fs::create_dir_all(&dir)?;
    manifest.outputs = files.iter().map(|(name, _)| name.clone()).collect();
    for (name, body) in files {
        fs::write(dir.join(name), body)?;
    }
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0, -0.0] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn grid_round_trip() {
        let field = GridField {
            lo: vec![-1.0, -0.5],
            hi: vec![1.0, 0.5],
            res: vec![2, 3],
            values: vec![0.1, 0.2, 1.0 / 3.0, 0.4, 0.5, 0.6],
            status: vec![NodeStatus::Ok, NodeStatus::Ok, NodeStatus::Failed, NodeStatus::Ok, NodeStatus::Ok, NodeStatus::Ok],
            solver: "bisection".into(),
            tol: 1e-8,
        };
        let text = grid_table(&field).render().unwrap();
        assert!(text.starts_with("# lo: "));
        assert!(text.contains("\nx_1,x_2,T,status\n"));
        assert_eq!(parse_grid(&text).unwrap(), field);
    }

    #[test]
    fn manifest_key_ignores_outputs_and_time() {
        let mut a = RunManifest::new("mintime", "catalog:double-integrator", 0);
        a.param("point", [1.0, 0.0]).tolerance("tol", 1e-8);
        let mut b = a.clone();
        b.wall_time_s = 3.0;
        b.outputs = vec!["result.json".into()];
        assert_eq!(a.key(), b.key());
        b.seed = 1;
        assert_ne!(a.key(), b.key());
        assert_eq!(a.key().len(), 16);
    }

    #[test]
    fn runs_write_into_hashed_directories() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("grid", "catalog:harmonic", 0);
        let dir = write_run(tmp.path(), &mut m, &[("a.csv".into(), "x\n1\n".into())]).unwrap();
        assert_eq!(dir.file_name().unwrap().to_str().unwrap(), m.key());
        assert_eq!(fs::read_to_string(dir.join("a.csv")).unwrap(), "x\n1\n");
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back.outputs, vec!["a.csv".to_string()]);
    }
}
