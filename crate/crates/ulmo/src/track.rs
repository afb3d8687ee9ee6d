//! Movement tracks: ordered times and positions, with optional velocities
//! and per-time covariates.
//!
//! Tracks serialize to CSV with header `track_id,t,x,y[,vx,vy]`; several
//! tracks share one file, grouped by `track_id`.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One animal's trajectory: strictly increasing times and `n x d` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    times: Vec<f64>,
    positions: Vec<f64>,
    velocities: Option<Vec<f64>>,
    covariates: Option<TrackCovariates>,
    dim: usize,
}

/// Per-time covariate rows attached to a track, for time-varying movement
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackCovariates {
    pub names: Vec<String>,
    /// `n x p` row-major values, one row per track time.
    pub rows: Vec<f64>,
}

impl Track {
    pub fn new(times: Vec<f64>, positions: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("track dimension must be positive"));
        }
        if positions.len() != times.len() * dim {
            return Err(Error::invalid(format!(
                "{} positions for {} times of dimension {dim}",
                positions.len(),
                times.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("track times must be strictly increasing"));
        }
        if times.iter().chain(&positions).any(|v| !v.is_finite()) {
            return Err(Error::invalid("track contains non-finite values"));
        }
        Ok(Track { times, positions, velocities: None, covariates: None, dim })
    }

    pub fn with_velocities(mut self, velocities: Vec<f64>) -> Result<Self> {
        if velocities.len() != self.len() * self.dim {
            return Err(Error::invalid("velocity array has wrong length"));
        }
        if velocities.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite velocity"));
        }
        self.velocities = Some(velocities);
        Ok(self)
    }

    pub fn with_covariates(mut self, covariates: TrackCovariates) -> Result<Self> {
        if covariates.rows.len() != self.len() * covariates.names.len() {
            return Err(Error::invalid("covariate array has wrong shape"));
        }
        self.covariates = Some(covariates);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, i: usize) -> f64 {
        self.times[i]
    }

    /// Time interval between observations `i` and `i + 1`.
    pub fn dt(&self, i: usize) -> f64 {
        self.times[i + 1] - self.times[i]
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn positions(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn velocity(&self, i: usize) -> Option<&[f64]> {
        self.velocities.as_ref().map(|v| &v[i * self.dim..(i + 1) * self.dim])
    }

    pub fn has_velocities(&self) -> bool {
        self.velocities.is_some()
    }

    pub fn velocities(&self) -> Option<impl Iterator<Item = &[f64]>> {
        self.velocities.as_ref().map(|v| v.chunks_exact(self.dim))
    }

    pub fn covariates(&self) -> Option<&TrackCovariates> {
        self.covariates.as_ref()
    }

    pub fn covariate_row(&self, i: usize) -> Option<&[f64]> {
        self.covariates.as_ref().map(|c| {
            let p = c.names.len();
            &c.rows[i * p..(i + 1) * p]
        })
    }

    /// Keep every `factor`-th observation, starting at index 0. Original
    /// times are preserved.
    pub fn thin(&self, factor: usize) -> Result<Track> {
        if factor < 1 {
            return Err(Error::invalid("thinning factor must be >= 1"));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let keep: Vec<usize> = (0..self.len()).step_by(factor).collect();
        let d = self.dim;
        let pick = |flat: &[f64], width: usize| -> Vec<f64> {
            keep.iter().flat_map(|&i| flat[i * width..(i + 1) * width].to_vec()).collect()
        };
        let mut t = Track::new(
            keep.iter().map(|&i| self.times[i]).collect(),
            pick(&self.positions, d),
            d,
        )?;
        if let Some(v) = &self.velocities {
            t = t.with_velocities(pick(v, d))?;
        }
        if let Some(c) = &self.covariates {
            t = t.with_covariates(TrackCovariates {
                names: c.names.clone(),
                rows: pick(&c.rows, c.names.len()),
            })?;
        }
        Ok(t)
    }
}

/// Write tracks as CSV (`track_id,t,x,y[,vx,vy]`).
///
/// Velocity columns are written only when every track has velocities.
pub fn write_tracks_csv(mut w: impl Write, tracks: &[(String, Track)]) -> Result<()> {
    let with_vel = !tracks.is_empty() && tracks.iter().all(|(_, t)| t.has_velocities());
    if tracks.iter().any(|(_, t)| t.dim() != 2) {
        return Err(Error::invalid("track CSV supports 2-d tracks only"));
    }
    writeln!(w, "track_id,t,x,y{}", if with_vel { ",vx,vy" } else { "" })?;
    for (id, track) in tracks {
        for i in 0..track.len() {
            let p = track.position(i);
            write!(w, "{id},{},{},{}", track.time(i), p[0], p[1])?;
            if with_vel {
                let v = track.velocity(i).expect("checked above");
                write!(w, ",{},{}", v[0], v[1])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_tracks_csv_file(path: impl AsRef<Path>, tracks: &[(String, Track)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tracks_csv(std::io::BufWriter::new(file), tracks)
}

/// Read tracks from CSV (`track_id,t,x,y[,vx,vy]`), grouped by `track_id`
/// in order of first appearance.
pub fn read_tracks_csv(r: impl BufRead) -> Result<Vec<(String, Track)>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty track CSV"))?
        .map_err(Error::Io)?;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let with_vel = match cols.as_slice() {
        ["track_id", "t", "x", "y"] => false,
        ["track_id", "t", "x", "y", "vx", "vy"] => true,
        _ => {
            return Err(Error::invalid(format!(
                "track CSV header must be track_id,t,x,y[,vx,vy]; got {header:?}"
            )))
        }
    };
    struct Partial {
        times: Vec<f64>,
        positions: Vec<f64>,
        velocities: Vec<f64>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, Partial> = std::collections::HashMap::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let expect = if with_vel { 6 } else { 4 };
        if fields.len() != expect {
            return Err(Error::invalid(format!(
                "track CSV row {}: expected {expect} fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let num = |s: &str| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::invalid(format!("track CSV row {}: bad number {s:?}", lineno + 2))
            })
        };
        let id = fields[0].to_string();
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id);
            Partial { times: Vec::new(), positions: Vec::new(), velocities: Vec::new() }
        });
        entry.times.push(num(fields[1])?);
        entry.positions.push(num(fields[2])?);
        entry.positions.push(num(fields[3])?);
        if with_vel {
            entry.velocities.push(num(fields[4])?);
            entry.velocities.push(num(fields[5])?);
        }
    }
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let p = groups.remove(&id).expect("group exists");
        let mut track = Track::new(p.times, p.positions, 2)
            .map_err(|e| Error::invalid(format!("track {id:?}: {e}")))?;
        if with_vel {
            track = track.with_velocities(p.velocities)?;
        }
        out.push((id, track));
    }
    Ok(out)
}

pub fn read_tracks_csv_file(path: impl AsRef<Path>) -> Result<Vec<(String, Track)>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::invalid(format!("cannot read tracks {}: {e}", path.display())))?;
    read_tracks_csv(std::io::BufReader::new(file))
        .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}
