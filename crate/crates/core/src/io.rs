//! On-disk formats.
//!
//! A grid function `NAME` is two files: `NAME.json` (header) and `NAME.csv`
//! (payload, columns `re,im`, one row per grid point in row-major order, last
//! axis fastest). Samples are CSV with columns `z1..zd`, `x1..xd` and, for the
//! Berkson model, `y`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ecf::{Model, SampleSet};
use crate::error::{Error, Result};
use crate::grid::{GridFn, GridSpec, C64};
use crate::ident::Solution;

pub const GRIDFN_FORMAT: &str = "gridfn/1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridFnHeader {
    pub format: String,
    pub label: String,
    pub spec: GridSpec,
    /// Payload file name, relative to the header.
    pub payload: String,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

/// Writes `dir/name.json` and `dir/name.csv`; returns the header path.
pub fn write_gridfn(dir: &Path, name: &str, f: &GridFn) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let payload = format!("{name}.csv");
    let mut w = csv::Writer::from_path(dir.join(&payload)).map_err(csv_err)?;
    w.write_record(["re", "im"]).map_err(csv_err)?;
    for v in &f.values {
        w.write_record([v.re.to_string(), v.im.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    let header = GridFnHeader {
        format: GRIDFN_FORMAT.into(),
        label: f.label.clone(),
        spec: f.spec.clone(),
        payload,
    };
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&header)?)?;
    Ok(path)
}

pub fn read_gridfn(header_path: &Path) -> Result<GridFn> {
    let header: GridFnHeader = serde_json::from_str(&fs::read_to_string(header_path)?)?;
    if header.format != GRIDFN_FORMAT {
        return Err(Error::Input(format!("unsupported grid function format '{}'", header.format)));
    }
    let dir = header_path.parent().unwrap_or(Path::new("."));
    let mut r = csv::Reader::from_path(dir.join(&header.payload)).map_err(csv_err)?;
    let mut values = Vec::with_capacity(header.spec.len());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Csv("short row".into()))?
                .trim()
                .parse()
                .map_err(|_| Error::Csv(format!("bad number in row {values_len}", values_len = values.len())))
        };
        values.push(C64::new(num(0)?, num(1)?));
    }
    GridFn::new(header.spec, values, header.label)
}

/// Writes a sample as CSV.
pub fn write_samples(path: &Path, s: &SampleSet) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let d = s.dim;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut head: Vec<String> = (1..=d).map(|k| format!("z{k}")).collect();
    head.extend((1..=d).map(|k| format!("x{k}")));
    if s.y.is_some() {
        head.push("y".into());
    }
    w.write_record(&head).map_err(csv_err)?;
    for j in 0..s.len() {
        let mut row: Vec<String> = s.z_row(j).iter().map(|v| v.to_string()).collect();
        row.extend(s.x_row(j).iter().map(|v| v.to_string()));
        if let Some(y) = &s.y {
            row.push(y[j].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a sample; the dimension is taken from the `z` columns.
pub fn read_samples(path: &Path, model: Model) -> Result<SampleSet> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let head: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| head.iter().position(|h| h == name);
    let d = (1..=2).take_while(|k| find(&format!("z{k}")).is_some()).count();
    if d == 0 {
        return Err(Error::Input(format!("{}: no z1 column", path.display())));
    }
    let zc: Vec<usize> = (1..=d).map(|k| find(&format!("z{k}")).unwrap()).collect();
    let xc: Vec<usize> = (1..=d)
        .map(|k| find(&format!("x{k}")).ok_or_else(|| Error::Input(format!("{}: missing column x{k}", path.display()))))
        .collect::<Result<_>>()?;
    let yc = find("y");
    if model == Model::Example2 && yc.is_none() {
        return Err(Error::Input(format!("{}: model example2 needs a y column", path.display())));
    }
    let (mut z, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|t| t.trim().parse().ok())
                .ok_or_else(|| Error::Csv(format!("row {}: bad value in column {}", line + 2, head[c])))
        };
        for &c in &zc {
            z.push(num(c)?);
        }
        for &c in &xc {
            x.push(num(c)?);
        }
        if let Some(c) = yc {
            y.push(num(c)?);
        }
    }
    if z.is_empty() {
        return Err(Error::EmptySample);
    }
    SampleSet::new(model, d, z, x, yc.map(|_| y))
}

/// Summary written next to the grid functions of a solution.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolutionManifest {
    pub format: String,
    pub case: crate::ident::Case,
    pub c: [f64; 2],
    pub tau: f64,
    pub residual: f64,
    pub mask_points: usize,
    pub mask_coverage: f64,
    pub dropped: usize,
    pub floored: usize,
    pub identified: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight: Option<crate::regular::WeightParams>,
    pub files: Vec<String>,
}

/// Writes `manifest.json` and the grid functions of a solution into `dir`.
pub fn write_solution(dir: &Path, sol: &Solution) -> Result<SolutionManifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, f: &GridFn| -> Result<()> {
        write_gridfn(dir, name, f)?;
        files.push(format!("{name}.json"));
        Ok(())
    };
    put("gamma", &sol.gamma)?;
    put("phi", &sol.phi)?;
    let mask = GridFn {
        spec: sol.mask.spec.clone(),
        values: sol.mask.inside.iter().map(|&b| C64::new(if b { 1.0 } else { 0.0 }, 0.0)).collect(),
        label: "mask".into(),
    };
    put("mask", &mask)?;
    if let Some(g) = &sol.g_real {
        put("g_real", g)?;
    }
    if let Some(f) = &sol.f_real {
        put("f_real", f)?;
    }
    let manifest = SolutionManifest {
        format: "solution/1".into(),
        case: sol.case,
        c: [sol.c.re, sol.c.im],
        tau: sol.tau,
        residual: sol.residual,
        mask_points: sol.mask.count(),
        mask_coverage: sol.mask.coverage(),
        dropped: sol.dropped,
        floored: sol.floored,
        identified: sol.identified,
        weight: sol.weight,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// `data.csv` → `data.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gridfn_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::square(-2.0, 2.0, 16).unwrap();
        let f = GridFn::from_fn(&g, "f", |x| C64::new(x[0].sin(), 1.0 / 3.0 + x[1]));
        let h = write_gridfn(dir.path(), "f", &f).unwrap();
        let back = read_gridfn(&h).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn samples_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let s = SampleSet::new(Model::Example2, 1, vec![0.1, -2.5], vec![0.3, 1e-17], Some(vec![1.0, 2.0]))
            .unwrap();
        write_samples(&p, &s).unwrap();
        let back = read_samples(&p, Model::Example2).unwrap();
        assert_eq!(back.z, s.z);
        assert_eq!(back.x, s.x);
        assert_eq!(back.y, s.y);
    }

    #[test]
    fn missing_y_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        fs::write(&p, "z1,x1\n0.5,0.5\n1.0,1.0\n").unwrap();
        let err = read_samples(&p, Model::Example2).unwrap_err();
        assert!(err.is_config());
        assert!(read_samples(&p, Model::Example1).is_ok());
    }
}
