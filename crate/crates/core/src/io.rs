//! File formats: long-format CSV data, JSON model documents and result tables.
//!
//! Reals are written in Rust's shortest round-trip decimal form, so reading
//! back any file written here reproduces the values bit for bit.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FittedModel;
use crate::model::{ClusterData, Dataset, Family, FamilyKind, MixtureSpec, Theta};
use crate::msep::MsepRecord;
use crate::predict::Prediction;
use crate::quadrature::DEFAULT_ORDER;

pub const MODEL_VERSION: u32 = 1;

/// Options for reading long-format CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsvSchema {
    /// Prepend a column of ones to both `X` and `Z`.
    pub intercept: bool,
}

/// Declared covariate names, without the `x:`/`z:` prefixes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ColumnNames {
    pub x: Vec<String>,
    pub z: Vec<String>,
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse { line: line as usize, msg: msg.into() }
}

/// Read `cluster,y,x:<name>...,z:<name>...` rows. Clusters keep the order in
/// which they first appear.
pub fn read_csv<R: Read>(reader: R, schema: CsvSchema) -> Result<(Dataset, ColumnNames)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(parse_err(1, "empty file: expected a header line")),
    };
    let cols: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    if cols.len() < 2 || cols[0] != "cluster" || cols[1] != "y" {
        return Err(parse_err(1, "header must start with 'cluster,y'"));
    }
    let mut names = ColumnNames::default();
    let mut roles = Vec::new();
    for c in &cols[2..] {
        if let Some(n) = c.strip_prefix("x:") {
            names.x.push(n.to_string());
            roles.push(true);
        } else if let Some(n) = c.strip_prefix("z:") {
            names.z.push(n.to_string());
            roles.push(false);
        } else {
            return Err(parse_err(1, format!("unknown column '{c}' (expected x:<name> or z:<name>)")));
        }
    }
    let q_f = names.x.len() + usize::from(schema.intercept);
    let q_r = names.z.len() + usize::from(schema.intercept);
    if q_f == 0 {
        return Err(parse_err(1, "no fixed-effect columns; add x:<name> columns or use --intercept"));
    }
    if q_r == 0 {
        return Err(parse_err(1, "no random-effect columns; add z:<name> columns or use --intercept"));
    }

    struct Rows {
        y: Vec<f64>,
        x: Vec<f64>,
        z: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Rows> = HashMap::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != cols.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", cols.len(), rec.len())));
        }
        let num = |j: usize| -> Result<f64> {
            let s = rec[j].trim();
            if s.is_empty() {
                return Err(parse_err(line, format!("missing value in column '{}'", cols[j])));
            }
            let v: f64 = s
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric value '{s}' in column '{}'", cols[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(line, format!("non-finite value '{s}' in column '{}'", cols[j])))
            }
        };
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(parse_err(line, "missing cluster id"));
        }
        let y = num(1)?;
        let mut xs = Vec::with_capacity(q_f);
        let mut zs = Vec::with_capacity(q_r);
        if schema.intercept {
            xs.push(1.0);
            zs.push(1.0);
        }
        for (k, &is_x) in roles.iter().enumerate() {
            let v = num(k + 2)?;
            if is_x {
                xs.push(v);
            } else {
                zs.push(v);
            }
        }
        let g = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Rows { y: Vec::new(), x: Vec::new(), z: Vec::new() }
        });
        g.y.push(y);
        g.x.extend(xs);
        g.z.extend(zs);
    }
    let clusters = order
        .into_iter()
        .map(|id| {
            let g = groups.remove(&id).expect("grouped id");
            let n = g.y.len();
            ClusterData::new(
                id,
                DVector::from_vec(g.y),
                DMatrix::from_row_slice(n, q_f, &g.x),
                DMatrix::from_row_slice(n, q_r, &g.z),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((Dataset::new(clusters)?, names))
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: CsvSchema) -> Result<Dataset> {
    Ok(read_csv(BufReader::new(File::open(path)?), schema)?.0)
}

/// Write a dataset in long format. Every design column is written, so
/// reading the file back without `--intercept` gives the same dataset.
pub fn write_csv<W: Write>(dataset: &Dataset, names: Option<&ColumnNames>, writer: W) -> Result<()> {
    let q_f = dataset.fixed_dim();
    let q_r = dataset.re_dim();
    let default = |p: &str, k: usize| -> Vec<String> { (0..k).map(|i| format!("{p}{i}")).collect() };
    let (xn, zn) = match names {
        Some(n) if n.x.len() == q_f && n.z.len() == q_r => (n.x.clone(), n.z.clone()),
        _ => (default("x", q_f), default("z", q_r)),
    };
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster".to_string(), "y".to_string()];
    header.extend(xn.iter().map(|n| format!("x:{n}")));
    header.extend(zn.iter().map(|n| format!("z:{n}")));
    w.write_record(&header).map_err(csv_err)?;
    for c in &dataset.clusters {
        for j in 0..c.n() {
            let mut row = vec![c.id.clone(), c.y[j].to_string()];
            row.extend(c.x.row(j).iter().map(f64::to_string));
            row.extend(c.z.row(j).iter().map(f64::to_string));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn export_csv(dataset: &Dataset, names: Option<&ColumnNames>, path: impl AsRef<Path>) -> Result<()> {
    write_csv(dataset, names, BufWriter::new(File::create(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParameter(format!("csv: {other:?}")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MixtureDoc {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Lower-triangular Cholesky factors packed row by row.
    scales: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    family: FamilyKind,
    beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau2: Option<f64>,
    #[serde(rename = "L")]
    l: Vec<Vec<f64>>,
    mixture: MixtureDoc,
    #[serde(default)]
    loglik: Option<f64>,
    #[serde(default)]
    converged: bool,
    #[serde(default)]
    n_evals: usize,
    #[serde(default = "default_order")]
    gh_order: usize,
    #[serde(default)]
    per_cluster: Vec<Prediction>,
}

fn default_order() -> usize {
    DEFAULT_ORDER
}

fn pack_lower(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..=i {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn unpack_lower(v: &[f64], d: usize) -> Result<DMatrix<f64>> {
    if v.len() != d * (d + 1) / 2 {
        return Err(Error::Dimension(format!("packed factor needs {} entries, got {}", d * (d + 1) / 2, v.len())));
    }
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        for j in 0..=i {
            m[(i, j)] = v[k];
            k += 1;
        }
    }
    Ok(m)
}

/// JSON document for a fitted model.
pub fn model_to_json(fitted: &FittedModel) -> Result<String> {
    let t = &fitted.theta_hat;
    let doc = ModelDoc {
        version: MODEL_VERSION,
        family: t.family.kind,
        beta: t.beta.iter().copied().collect(),
        tau2: (t.family.kind == FamilyKind::Gaussian).then_some(t.family.dispersion),
        l: t.re_scale.row_iter().map(|r| r.iter().copied().collect()).collect(),
        mixture: MixtureDoc {
            weights: t.re_mixture.weights.clone(),
            means: t.re_mixture.means.iter().map(|m| m.iter().copied().collect()).collect(),
            scales: t.re_mixture.scales.iter().map(pack_lower).collect(),
        },
        loglik: fitted.loglik.is_finite().then_some(fitted.loglik),
        converged: fitted.converged,
        n_evals: fitted.n_evals,
        gh_order: fitted.gh_order,
        per_cluster: fitted.per_cluster.clone(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Parse a model document. `loglik` and `per_cluster` may be omitted, as in
/// hand-written parameter files.
pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MODEL_VERSION) => {}
        Some(v) => return Err(Error::Unsupported(format!("model version {v}, expected {MODEL_VERSION}"))),
        None => return Err(Error::Unsupported("model document has no version field".into())),
    }
    let doc: ModelDoc = serde_json::from_value(value)?;
    let family = match doc.family {
        FamilyKind::Gaussian => Family::gaussian(
            doc.tau2.ok_or_else(|| Error::InvalidParameter("gaussian model needs tau2".into()))?,
        )?,
        other => Family::of_kind(other),
    };
    let d = doc.l.len();
    if doc.l.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("L must be square".into()));
    }
    let l = DMatrix::from_fn(d, d, |i, j| doc.l[i][j]);
    let scales = doc.mixture.scales.iter().map(|s| unpack_lower(s, d)).collect::<Result<Vec<_>>>()?;
    let means = doc.mixture.means.iter().map(|m| DVector::from_column_slice(m)).collect();
    let spec = MixtureSpec::new(doc.mixture.weights, means, scales)?;
    let theta = Theta::new(DVector::from_vec(doc.beta), family, l, spec)?;
    Ok(FittedModel {
        theta_hat: theta,
        loglik: doc.loglik.unwrap_or(f64::NAN),
        converged: doc.converged,
        n_evals: doc.n_evals,
        per_cluster: doc.per_cluster,
        gh_order: doc.gh_order,
    })
}

pub fn save_model(fitted: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_json(fitted)? + "\n")?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

/// `cluster,w,v,pi1..pic` table.
pub fn write_predictions<W: Write>(preds: &[Prediction], writer: W) -> Result<()> {
    let c = preds.first().map_or(1, |p| p.comp_weights.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["cluster".to_string(), "w".into(), "v".into()];
    header.extend((1..=c).map(|k| format!("pi{k}")));
    w.write_record(&header).map_err(csv_err)?;
    for p in preds {
        let mut row = vec![p.cluster_id.clone(), p.w.to_string(), p.v.to_string()];
        row.extend(p.comp_weights.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, Vec<(u64, Vec<String>)>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut rows = Vec::new();
    let mut header = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(|s| s.trim().to_string()).collect();
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push((line, fields));
        }
    }
    Ok((header.ok_or_else(|| parse_err(1, "empty file"))?, rows))
}

fn field(header: &[String], name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| parse_err(1, format!("missing column '{name}'")))
}

fn cell(line: u64, row: &[String], j: usize) -> Result<f64> {
    row.get(j)
        .ok_or_else(|| parse_err(line, "row too short"))?
        .parse()
        .map_err(|_| parse_err(line, format!("non-numeric value '{}'", row[j])))
}

pub fn read_predictions<R: Read>(reader: R) -> Result<Vec<Prediction>> {
    let (header, rows) = read_table(reader)?;
    let (ic, iw, iv) = (field(&header, "cluster")?, field(&header, "w")?, field(&header, "v")?);
    let pis: Vec<usize> = (1..).map_while(|k| header.iter().position(|h| *h == format!("pi{k}"))).collect();
    rows.iter()
        .map(|(line, r)| {
            Ok(Prediction {
                cluster_id: r.get(ic).cloned().unwrap_or_default(),
                w: cell(*line, r, iw)?,
                v: cell(*line, r, iv)?,
                comp_weights: pis.iter().map(|&j| cell(*line, r, j)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// `target,u,msep,bias,variance,mc_se,n_reps` table.
pub fn write_msep_records<W: Write>(records: &[MsepRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["target", "u", "msep", "bias", "variance", "mc_se", "n_reps"]).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.target.clone(),
            r.u.map_or(String::new(), |u| u.to_string()),
            r.msep.to_string(),
            r.bias.to_string(),
            r.variance.to_string(),
            r.mc_se.to_string(),
            r.n_reps.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_msep_records<R: Read>(reader: R) -> Result<Vec<MsepRecord>> {
    let (header, rows) = read_table(reader)?;
    let idx = |n: &str| field(&header, n);
    let (it, iu, im, ib, iv, is, ir) =
        (idx("target")?, idx("u")?, idx("msep")?, idx("bias")?, idx("variance")?, idx("mc_se")?, idx("n_reps")?);
    rows.iter()
        .map(|(line, r)| {
            let u = match r.get(iu).map(String::as_str) {
                None | Some("") => None,
                Some(_) => Some(cell(*line, r, iu)?),
            };
            Ok(MsepRecord {
                target: r.get(it).cloned().unwrap_or_default(),
                u,
                msep: cell(*line, r, im)?,
                bias: cell(*line, r, ib)?,
                variance: cell(*line, r, iv)?,
                mc_se: cell(*line, r, is)?,
                n_reps: cell(*line, r, ir)? as usize,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_clusters() {
        let text = "cluster,y,x:t,z:t\na,1,0.5,0.5\nb,2,1,1\na,3,1.5,1.5\nb,4,2,2\na,5,2.5,2.5\nb,6,3,3\n";
        let (ds, names) = read_csv(text.as_bytes(), CsvSchema { intercept: true }).unwrap();
        assert_eq!(ds.m(), 2);
        assert_eq!(ds.clusters[0].id, "a");
        assert_eq!(ds.clusters[0].n(), 3);
        assert_eq!(ds.clusters[1].n(), 3);
        assert_eq!(ds.fixed_dim(), 2);
        assert_eq!(ds.clusters[0].x[(2, 1)], 2.5);
        assert_eq!(names.x, vec!["t"]);
        assert!(ds.clusters[0].has_intercepts());
    }

    #[test]
    fn errors_cite_lines() {
        let text = "cluster,y,x:a\nc,1,2\nc,1,2\nc,1,2\nc,1,2\nc,1,2\nc,,2\n";
        match read_csv(text.as_bytes(), CsvSchema { intercept: true }) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
        let ragged = "cluster,y,x:a\nc,1\n";
        let icpt = CsvSchema { intercept: true };
        assert!(matches!(read_csv(ragged.as_bytes(), icpt), Err(Error::Parse { line: 2, .. })));
        let bad = "cluster,y,x:a,z:b\nc,1,abc,1\n";
        assert!(matches!(read_csv(bad.as_bytes(), CsvSchema::default()), Err(Error::Parse { line: 2, .. })));
        let unknown = "cluster,y,w\n";
        assert!(matches!(read_csv(unknown.as_bytes(), CsvSchema::default()), Err(Error::Parse { line: 1, .. })));
        assert!(read_csv("".as_bytes(), CsvSchema::default()).is_err());
    }

    #[test]
    fn packed_factor_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.2, 2.0, 0.0, -0.3, 0.4, 3.0]);
        assert_eq!(unpack_lower(&pack_lower(&m), 3).unwrap(), m);
    }

    #[test]
    fn version_mismatch() {
        let text = r#"{"version": 2, "family": "poisson", "beta": [0], "L": [[1]],
            "mixture": {"weights": [1], "means": [[0]], "scales": [[1]]}}"#;
        assert!(matches!(model_from_json(text), Err(Error::Unsupported(_))));
    }

    #[test]
    fn hand_written_model_loads() {
        let text = r#"{"version": 1, "family": "poisson", "beta": [0, 1], "L": [[1]],
            "mixture": {"weights": [0.9, 0.1], "means": [[-0.28], [2.56]], "scales": [[0.28], [1.42]]}}"#;
        let f = model_from_json(text).unwrap();
        assert_eq!(f.theta_hat.components(), 2);
        assert!(f.loglik.is_nan());
        assert_eq!(f.gh_order, DEFAULT_ORDER);
    }
}
