//! Dataset directory: one CSV per series family plus `manifest.json`.
//!
//! ```text
//! manifest.json     format_version, horizon, max_lead, products, seed, config_hash, config, holidays, files
//! products.csv      product_id,vendor,group,initial_inventory
//! demand.csv        product_id,t,demand
//! economics.csv     product_id,t,price,cost
//! supply.csv        product_id,t,supply            ("inf" for unlimited)
//! constraints.csv   product_id,t,min_order_qty,batch_size,max_order_qty   ("inf" for none)
//! shares.csv        product_id,t,rho_0,...,rho_L
//! ```
//!
//! Floats are written with 17 significant digits, so export/import is lossless.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use super::{ExogenousState, GroundTruth, Product, Supply, World, WorldError, SHARES_TOLERANCE};
use crate::postprocess::VendorConstraints;

pub const WORLD_FORMAT_VERSION: u32 = 1;

const FILES: [&str; 6] = [
    "products.csv",
    "demand.csv",
    "economics.csv",
    "supply.csv",
    "constraints.csv",
    "shares.csv",
];

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    horizon: usize,
    max_lead: usize,
    products: usize,
    seed: Option<u64>,
    config_hash: Option<String>,
    config: Option<WorldConfig>,
    holidays: Vec<usize>,
    files: Vec<String>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> WorldError {
    WorldError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    }
}

fn fmt_f64(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:.16e}")
    }
}

fn write_csv(dir: &Path, name: &str, header: &[String], rows: Vec<Vec<String>>) -> Result<(), WorldError> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
    w.write_record(header).map_err(|e| io_err(&path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))
}

pub fn export_world(world: &World, dir: impl AsRef<Path>) -> Result<(), WorldError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let h = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    let n = world.num_products();
    let horizon = world.horizon();
    let each = |f: &dyn Fn(usize, usize, &ExogenousState) -> Vec<String>| {
        let mut rows = Vec::with_capacity(n * horizon);
        for i in 0..n {
            for (t, s) in world.states(i).iter().enumerate() {
                let mut row = vec![i.to_string(), t.to_string()];
                row.extend(f(i, t, s));
                rows.push(row);
            }
        }
        rows
    };

    let products = world
        .products()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            vec![
                i.to_string(),
                p.vendor.to_string(),
                p.group.to_string(),
                fmt_f64(p.initial_inventory),
            ]
        })
        .collect();
    write_csv(dir, FILES[0], &h(&["product_id", "vendor", "group", "initial_inventory"]), products)?;
    write_csv(
        dir,
        FILES[1],
        &h(&["product_id", "t", "demand"]),
        each(&|_, _, s| vec![fmt_f64(s.demand)]),
    )?;
    write_csv(
        dir,
        FILES[2],
        &h(&["product_id", "t", "price", "cost"]),
        each(&|_, _, s| vec![fmt_f64(s.price), fmt_f64(s.cost)]),
    )?;
    write_csv(
        dir,
        FILES[3],
        &h(&["product_id", "t", "supply"]),
        each(&|_, _, s| vec![fmt_f64(s.supply.as_f64())]),
    )?;
    write_csv(
        dir,
        FILES[4],
        &h(&["product_id", "t", "min_order_qty", "batch_size", "max_order_qty"]),
        each(&|_, _, s| {
            let c = s.constraints;
            vec![
                fmt_f64(c.min_order_qty),
                fmt_f64(c.batch_size),
                fmt_f64(c.max_order_qty.unwrap_or(f64::INFINITY)),
            ]
        }),
    )?;
    let mut shares_header = h(&["product_id", "t"]);
    shares_header.extend((0..=world.max_lead()).map(|j| format!("rho_{j}")));
    write_csv(
        dir,
        FILES[5],
        &shares_header,
        each(&|_, _, s| s.shares.iter().map(|&r| fmt_f64(r)).collect()),
    )?;

    let gt = world.ground_truth();
    let manifest = Manifest {
        format_version: WORLD_FORMAT_VERSION,
        horizon,
        max_lead: world.max_lead(),
        products: n,
        seed: gt.map(|g| g.seed),
        config_hash: gt.map(|g| g.config.hash()),
        config: gt.map(|g| g.config.clone()),
        holidays: world.holidays().to_vec(),
        files: FILES.iter().map(|s| s.to_string()).collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

struct Table {
    file: String,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn read_table(dir: &Path, name: &str, expected_header: &[String]) -> Result<Table, WorldError> {
    let path = dir.join(name);
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(&path)
        .map_err(|e| io_err(&path, e))?;
    let header = r.headers().map_err(|e| io_err(&path, e))?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected_header.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(WorldError::Malformed {
            file: name.into(),
            line: 1,
            msg: format!("header {got:?}, expected {expected_header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| WorldError::Malformed {
            file: name.into(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok(Table {
        file: name.into(),
        rows,
    })
}

impl Table {
    fn malformed(&self, line: usize, msg: impl Into<String>) -> WorldError {
        WorldError::Malformed {
            file: self.file.clone(),
            line,
            msg: msg.into(),
        }
    }

    fn float(&self, line: usize, rec: &csv::StringRecord, k: usize) -> Result<f64, WorldError> {
        let s = rec.get(k).unwrap_or("").trim();
        s.parse::<f64>()
            .map_err(|_| self.malformed(line, format!("column {} is not a number: `{s}`", k + 1)))
    }

    fn index(&self, line: usize, rec: &csv::StringRecord, k: usize, bound: usize) -> Result<usize, WorldError> {
        let s = rec.get(k).unwrap_or("").trim();
        let v = s
            .parse::<usize>()
            .map_err(|_| self.malformed(line, format!("column {} is not an index: `{s}`", k + 1)))?;
        if v >= bound {
            return Err(self.malformed(line, format!("index {v} out of range 0..{bound}")));
        }
        Ok(v)
    }

    /// Visits `(line, product, t, record)`; every cell of the grid must appear exactly once.
    fn cells(
        &self,
        products: usize,
        horizon: usize,
        mut f: impl FnMut(usize, usize, usize, &csv::StringRecord) -> Result<(), WorldError>,
    ) -> Result<(), WorldError> {
        let mut seen = vec![false; products * horizon];
        for (line, rec) in &self.rows {
            let i = self.index(*line, rec, 0, products)?;
            let t = self.index(*line, rec, 1, horizon)?;
            if std::mem::replace(&mut seen[i * horizon + t], true) {
                return Err(self.malformed(*line, format!("duplicate row for product {i} period {t}")));
            }
            f(*line, i, t, rec)?;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(self.malformed(
                0,
                format!("missing row for product {} period {}", k / horizon, k % horizon),
            ));
        }
        Ok(())
    }
}

pub fn import_world(dir: impl AsRef<Path>) -> Result<World, WorldError> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| io_err(&mpath, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| WorldError::Malformed {
        file: "manifest.json".into(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != WORLD_FORMAT_VERSION {
        return Err(WorldError::Version {
            found,
            expected: WORLD_FORMAT_VERSION,
        });
    }
    let m: Manifest = serde_json::from_value(value).map_err(|e| WorldError::Malformed {
        file: "manifest.json".into(),
        line: 0,
        msg: e.to_string(),
    })?;
    if m.products == 0 || m.horizon == 0 {
        return Err(WorldError::Invalid("manifest declares an empty world".into()));
    }
    let (n, horizon, l) = (m.products, m.horizon, m.max_lead);
    let h = |cols: &[&str]| cols.iter().map(|c| c.to_string()).collect::<Vec<_>>();

    let pt = read_table(dir, FILES[0], &h(&["product_id", "vendor", "group", "initial_inventory"]))?;
    let mut products: Vec<Option<Product>> = vec![None; n];
    for (line, rec) in &pt.rows {
        let i = pt.index(*line, rec, 0, n)?;
        let vendor = pt.index(*line, rec, 1, usize::MAX)?;
        let group = pt.index(*line, rec, 2, usize::MAX)?;
        let initial_inventory = pt.float(*line, rec, 3)?;
        if products[i].replace(Product { vendor, group, initial_inventory }).is_some() {
            return Err(pt.malformed(*line, format!("duplicate product {i}")));
        }
    }
    let products: Vec<Product> = products
        .into_iter()
        .enumerate()
        .map(|(i, p)| p.ok_or_else(|| pt.malformed(0, format!("missing product {i}"))))
        .collect::<Result<_, _>>()?;

    let blank = ExogenousState {
        demand: 0.0,
        price: 0.0,
        cost: 0.0,
        supply: Supply::Unlimited,
        constraints: VendorConstraints::unconstrained(),
        shares: vec![0.0; l + 1],
    };
    let mut states = vec![vec![blank; horizon]; n];

    let dt = read_table(dir, FILES[1], &h(&["product_id", "t", "demand"]))?;
    dt.cells(n, horizon, |line, i, t, rec| {
        states[i][t].demand = dt.float(line, rec, 2)?;
        Ok(())
    })?;
    let et = read_table(dir, FILES[2], &h(&["product_id", "t", "price", "cost"]))?;
    et.cells(n, horizon, |line, i, t, rec| {
        states[i][t].price = et.float(line, rec, 2)?;
        states[i][t].cost = et.float(line, rec, 3)?;
        Ok(())
    })?;
    let st = read_table(dir, FILES[3], &h(&["product_id", "t", "supply"]))?;
    st.cells(n, horizon, |line, i, t, rec| {
        states[i][t].supply = Supply::from_f64(st.float(line, rec, 2)?);
        Ok(())
    })?;
    let ct = read_table(
        dir,
        FILES[4],
        &h(&["product_id", "t", "min_order_qty", "batch_size", "max_order_qty"]),
    )?;
    ct.cells(n, horizon, |line, i, t, rec| {
        let max = ct.float(line, rec, 4)?;
        states[i][t].constraints = VendorConstraints {
            min_order_qty: ct.float(line, rec, 2)?,
            batch_size: ct.float(line, rec, 3)?,
            max_order_qty: (max != f64::INFINITY).then_some(max),
        };
        Ok(())
    })?;
    let mut sh = h(&["product_id", "t"]);
    sh.extend((0..=l).map(|j| format!("rho_{j}")));
    let rt = read_table(dir, FILES[5], &sh)?;
    rt.cells(n, horizon, |line, i, t, rec| {
        let shares = (0..=l).map(|j| rt.float(line, rec, 2 + j)).collect::<Result<Vec<_>, _>>()?;
        let sum: f64 = shares.iter().sum();
        if (sum - 1.0).abs() > SHARES_TOLERANCE {
            return Err(WorldError::SharesSum {
                product: i,
                t,
                sum,
                file: Some(rt.file.clone()),
                line: Some(line),
            });
        }
        states[i][t].shares = shares;
        Ok(())
    })?;

    let ground_truth = match (m.config, m.seed) {
        (Some(config), Some(seed)) => {
            if let Some(hash) = &m.config_hash {
                if *hash != config.hash() {
                    return Err(WorldError::Malformed {
                        file: "manifest.json".into(),
                        line: 0,
                        msg: "config hash does not match config".into(),
                    });
                }
            }
            Some(GroundTruth { config, seed })
        }
        (None, None) => None,
        _ => {
            return Err(WorldError::Malformed {
                file: "manifest.json".into(),
                line: 0,
                msg: "config and seed must be given together".into(),
            })
        }
    };
    World::new(l, products, states, m.holidays, ground_truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::generate_world;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&WorldConfig::multi_shipment(3, 15), 21).unwrap();
        export_world(&w, dir.path()).unwrap();
        let back = import_world(dir.path()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn rejects_unnormalized_shares_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&WorldConfig::discrete_small(), 2).unwrap();
        export_world(&w, dir.path()).unwrap();
        let path = dir.path().join("shares.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = "0,3,9.0000000000000000e-1,0,0".into();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match import_world(dir.path()).unwrap_err() {
            WorldError::SharesSum { product, t, line, .. } => {
                assert_eq!((product, t, line), (0, 3, Some(5)));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&WorldConfig::discrete_small(), 2).unwrap();
        export_world(&w, dir.path()).unwrap();
        let path = dir.path().join("manifest.json");
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 9");
        fs::write(&path, text).unwrap();
        assert_eq!(
            import_world(dir.path()).unwrap_err(),
            WorldError::Version { found: 9, expected: 1 }
        );
    }

    #[test]
    fn malformed_number_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate_world(&WorldConfig::discrete_small(), 2).unwrap();
        export_world(&w, dir.path()).unwrap();
        let path = dir.path().join("demand.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = "0,1,lots".into();
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match import_world(dir.path()).unwrap_err() {
            WorldError::Malformed { file, line, .. } => assert_eq!((file.as_str(), line), ("demand.csv", 3)),
            e => panic!("unexpected {e}"),
        }
    }
}
