//! Parameter checkpoints: a header line holding `K`, then one value per line.
//! Values use the shortest round-trip decimal form, so reading back yields
//! bit-identical parameters.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub fn write_checkpoint<W: Write>(mut out: W, theta: &[f64]) -> Result<()> {
    writeln!(out, "{}", theta.len())?;
    for v in theta {
        writeln!(out, "{v:?}")?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut lines = input
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()));
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing parameter count".into(),
    })?;
    let k: usize = header?.trim().parse().map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad parameter count: {e}"),
    })?;
    let mut theta = Vec::with_capacity(k);
    for (i, line) in lines {
        let v: f64 = line?.trim().parse().map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("bad parameter value: {e}"),
        })?;
        theta.push(v);
    }
    if theta.len() != k {
        return Err(Error::Parse {
            line: theta.len() + 2,
            message: format!("header declares {k} values, found {}", theta.len()),
        });
    }
    Ok(theta)
}
