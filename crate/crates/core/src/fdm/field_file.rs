//! Plain-text grid file for contour plotting.
//!
//! ```text
//! # stream-field v1
//! x_min -20
//! x_max 20
//! y_min -10
//! y_max 10
//! nx 161
//! ny 81
//! boundary_gain 1
//! obstacles 2
//! obstacle -5 1 2
//! obstacle 6 -1.5 2
//! psi
//! <ny lines of nx space-separated values, row 0 = y_min first>
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a read
//! reproduces every node bit for bit.

use super::{discretize, FieldError, GridSpec, StreamFieldGrid};
use crate::flowfield::ObstacleSpec;
use std::io::{self, BufRead, Write};
use thiserror::Error;

const MAGIC: &str = "# stream-field v1";

#[derive(Debug, Error)]
pub enum FieldFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub fn write_field_file<W: Write>(field: &StreamFieldGrid, mut out: W) -> io::Result<()> {
    let g = field.grid();
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "x_min {}", g.x_min)?;
    writeln!(out, "x_max {}", g.x_max)?;
    writeln!(out, "y_min {}", g.y_min)?;
    writeln!(out, "y_max {}", g.y_max)?;
    writeln!(out, "nx {}", g.nx)?;
    writeln!(out, "ny {}", g.ny)?;
    writeln!(out, "boundary_gain {}", field.boundary_gain())?;
    writeln!(out, "obstacles {}", field.obstacles().len())?;
    for o in field.obstacles() {
        writeln!(out, "obstacle {} {} {}", o.center.x, o.center.y, o.radius)?;
    }
    writeln!(out, "psi")?;
    for row in 0..g.ny {
        let line: Vec<String> = (0..g.nx).map(|col| field.node_psi(row, col).to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

struct Lines<R> {
    inner: io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String, FieldFileError> {
        self.number += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(self.error("unexpected end of file")),
        }
    }

    fn error(&self, message: impl Into<String>) -> FieldFileError {
        FieldFileError::Parse {
            line: self.number,
            message: message.into(),
        }
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, FieldFileError> {
        let line = self.next_line()?;
        let value = line
            .strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| self.error(format!("expected `{key} <value>`")))?;
        value
            .trim()
            .parse()
            .map_err(|_| self.error(format!("bad value for {key}")))
    }

    fn numbers(&mut self, expected: usize) -> Result<Vec<f64>, FieldFileError> {
        let line = self.next_line()?;
        let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
        let values = values.map_err(|_| self.error("bad number"))?;
        if values.len() != expected {
            return Err(self.error(format!("expected {expected} values, got {}", values.len())));
        }
        Ok(values)
    }
}

pub fn read_field_file<R: BufRead>(input: R) -> Result<StreamFieldGrid, FieldFileError> {
    let mut lines = Lines {
        inner: input.lines(),
        number: 0,
    };
    if lines.next_line()?.trim() != MAGIC {
        return Err(lines.error("missing stream-field header"));
    }
    let x_min = lines.keyed("x_min")?;
    let x_max = lines.keyed("x_max")?;
    let y_min = lines.keyed("y_min")?;
    let y_max = lines.keyed("y_max")?;
    let nx = lines.keyed("nx")?;
    let ny = lines.keyed("ny")?;
    let gain: f64 = lines.keyed("boundary_gain")?;
    let count: usize = lines.keyed("obstacles")?;
    let mut obstacles = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next_line()?;
        let rest = line
            .strip_prefix("obstacle ")
            .ok_or_else(|| lines.error("expected `obstacle <x> <y> <radius>`"))?;
        let v: Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
        match v.as_deref() {
            Ok([x, y, r]) => obstacles.push(ObstacleSpec::new(*x, *y, *r)),
            _ => return Err(lines.error("expected three obstacle numbers")),
        }
    }
    if lines.next_line()?.trim() != "psi" {
        return Err(lines.error("expected `psi`"));
    }
    let grid = GridSpec::new(x_min, x_max, y_min, y_max, nx, ny)?;
    let mut psi = Vec::with_capacity(grid.node_count());
    for _ in 0..ny {
        psi.extend(lines.numbers(nx)?);
    }
    let classification = discretize(&grid, &obstacles)?;
    Ok(StreamFieldGrid::from_nodal_values(classification, psi, gain)?)
}
