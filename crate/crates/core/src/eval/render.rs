//! Time-space artifacts: CSV grids and PNG rasters.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::field::SpeedField;
use crate::corridor::{CorridorConfig, SpeedLimit};
use crate::error::EvalError;
use crate::guard::{Attribution, Decision};
use crate::scalar::Scalar;

/// Posted limits as a gantry × tick grid (most upstream gantry first).
#[derive(Debug, Clone, PartialEq)]
pub struct LimitGrid {
    pub gantry_ids: Vec<String>,
    pub mileposts: Vec<f64>,
    pub times: Vec<f64>,
    pub cells: Vec<Vec<Option<(SpeedLimit, Attribution)>>>,
}

impl LimitGrid {
    /// Lane-specific decisions are ignored unless `lane` selects them.
    pub fn from_decisions(corridor: &CorridorConfig, decisions: &[Decision], lane: Option<u32>) -> Self {
        let mut order: Vec<usize> = (0..corridor.gantries.len()).collect();
        let pos = corridor.gantry_positions();
        order.sort_by(|&a, &b| pos[a].total_cmp(&pos[b]));
        let row_of: HashMap<&str, usize> =
            order.iter().enumerate().map(|(r, &g)| (corridor.gantries[g].id.as_str(), r)).collect();
        let mut times: Vec<f64> = decisions.iter().filter(|d| d.lane == lane).map(|d| d.t_s).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let col_of = |t: f64| times.partition_point(|&x| x < t);
        let mut cells = vec![vec![None; times.len()]; order.len()];
        for d in decisions.iter().filter(|d| d.lane == lane) {
            if let Some(&r) = row_of.get(d.gantry_id.as_str()) {
                cells[r][col_of(d.t_s)] = Some((d.final_limit, d.attribution));
            }
        }
        LimitGrid {
            gantry_ids: order.iter().map(|&g| corridor.gantries[g].id.clone()).collect(),
            mileposts: order.iter().map(|&g| corridor.gantries[g].milepost).collect(),
            times,
            cells,
        }
    }

    /// CSV with one row per gantry; `masked` blanks every non-POLICY cell.
    pub fn write_csv(&self, masked: bool, mut out: impl Write) -> Result<(), EvalError> {
        let header: Vec<String> = self.times.iter().map(|t| format!("{t}")).collect();
        writeln!(out, "gantry,milepost,{}", header.join(","))?;
        for (r, row) in self.cells.iter().enumerate() {
            let vals: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Some((v, a)) if !masked || *a == Attribution::Policy => v.0.to_string(),
                    _ => String::new(),
                })
                .collect();
            writeln!(out, "{},{},{}", self.gantry_ids[r], self.mileposts[r], vals.join(","))?;
        }
        Ok(())
    }

    /// One pixel per gantry row and tick column; masked cells are white.
    pub fn to_image(&self, masked: bool) -> RgbImage {
        let (w, h) = (self.times.len().max(1) as u32, self.cells.len().max(1) as u32);
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        for (r, row) in self.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if let Some((v, a)) = cell {
                    if !masked || *a == Attribution::Policy {
                        img.put_pixel(c as u32, r as u32, speed_colour(v.as_f64()));
                    }
                }
            }
        }
        img
    }
}

/// Red (slow) through yellow to green (fast) over 0..80 mph.
pub fn speed_colour(v: f64) -> Rgb<u8> {
    let f = (v / 80.0).clamp(0.0, 1.0);
    let (r, g) = if f < 0.5 { (1.0, f * 2.0) } else { (2.0 - f * 2.0, 1.0) };
    Rgb([(r * 220.0) as u8, (g * 200.0) as u8, 40])
}

/// CSV of one lane of a field: one row per time step, one column per x.
pub fn write_field_csv<T: Scalar>(field: &SpeedField<T>, lane: usize, mut out: impl Write) -> Result<(), EvalError> {
    let xs: Vec<String> = (0..field.nx).map(|i| format!("{:.3}", field.x0_mi + i as f64 * field.dx_mi)).collect();
    writeln!(out, "t_s,{}", xs.join(","))?;
    for k in 0..field.nt {
        let vals: Vec<String> = (0..field.nx).map(|i| format!("{:.2}", field.get(k, i, lane).f64())).collect();
        writeln!(out, "{},{}", field.t0_s + k as f64 * field.dt_s, vals.join(","))?;
    }
    Ok(())
}

/// Raster with space on the vertical axis (upstream at the top) and time
/// on the horizontal axis.
pub fn field_image<T: Scalar>(field: &SpeedField<T>, lane: usize) -> RgbImage {
    let mut img = RgbImage::new(field.nt.max(1) as u32, field.nx.max(1) as u32);
    for k in 0..field.nt {
        for i in 0..field.nx {
            img.put_pixel(k as u32, i as u32, speed_colour(field.get(k, i, lane).f64()));
        }
    }
    img
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), EvalError> {
    img.save(path)?;
    Ok(())
}
