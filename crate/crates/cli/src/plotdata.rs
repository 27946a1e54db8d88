//! Series extraction from trajectory CSV files.

use std::path::{Path, PathBuf};

use crate::{io_err, Failure};

enum Selector {
    /// A column copied verbatim.
    Column(usize),
    /// Infinity norm of `x - xhat` over the listed column pairs.
    ErrorNorm(Vec<(usize, usize)>),
}

fn find(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn error_pairs(header: &[String], sub: usize) -> Option<Vec<(usize, usize)>> {
    (1..=3)
        .map(|j| Some((find(header, &format!("sub{sub}_x{j}"))?, find(header, &format!("sub{sub}_xhat{j}"))?)))
        .collect()
}

fn unknown(sel: &str, header: &[String]) -> Failure {
    Failure::Input(format!("unknown column `{sel}`; available: {}, err, err:subN", header.join(", ")))
}

fn parse_selector(sel: &str, header: &[String]) -> Result<Selector, Failure> {
    if sel == "err" {
        let subs = (1..).map_while(|i| error_pairs(header, i)).flatten().collect::<Vec<_>>();
        if subs.is_empty() {
            return Err(unknown(sel, header));
        }
        return Ok(Selector::ErrorNorm(subs));
    }
    if let Some(rest) = sel.strip_prefix("err:sub") {
        let pairs = rest.parse::<usize>().ok().and_then(|i| error_pairs(header, i));
        return pairs.map(Selector::ErrorNorm).ok_or_else(|| unknown(sel, header));
    }
    find(header, sel).map(Selector::Column).ok_or_else(|| unknown(sel, header))
}

fn number(record: &csv::StringRecord, col: usize, row: usize) -> Result<f64, Failure> {
    let field = record.get(col).unwrap_or("");
    field.trim().parse().map_err(|_| Failure::Input(format!("row {row}, column {col}: `{field}` is not a number")))
}

/// Writes one `t,<selector>` file per selector into `dir`, keeping rows
/// `0, stride, 2·stride, …`. Returns the paths written.
pub fn extract(csv_path: &Path, selectors: &[String], stride: usize, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if stride == 0 {
        return Err(Failure::Input("invalid parameter `--stride`: must be >= 1".into()));
    }
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| io_err(csv_path, e))?;
    let header: Vec<String> = reader.headers().map_err(|e| io_err(csv_path, e))?.iter().map(str::to_string).collect();
    let t_col = find(&header, "t").ok_or_else(|| Failure::Input(format!("{}: no `t` column", csv_path.display())))?;
    let parsed = selectors.iter().map(|s| parse_selector(s, &header)).collect::<Result<Vec<_>, _>>()?;

    let mut series: Vec<Vec<(String, String)>> = vec![Vec::new(); parsed.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_err(csv_path, e))?;
        if row % stride != 0 {
            continue;
        }
        let t = record.get(t_col).unwrap_or("").to_string();
        for (sel, out) in parsed.iter().zip(&mut series) {
            let value = match sel {
                Selector::Column(c) => record.get(*c).unwrap_or("").to_string(),
                Selector::ErrorNorm(pairs) => {
                    let mut m = 0.0_f64;
                    for &(x, xh) in pairs {
                        m = m.max((number(&record, x, row)? - number(&record, xh, row)?).abs());
                    }
                    m.to_string()
                }
            };
            out.push((t.clone(), value));
        }
    }

    let mut written = Vec::with_capacity(selectors.len());
    for (name, rows) in selectors.iter().zip(&series) {
        let path = dir.join(format!("{}.csv", name.replace(':', "_")));
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        w.write_record(["t", name.as_str()]).map_err(|e| io_err(&path, e))?;
        for (t, v) in rows {
            w.write_record([t, v]).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
