//! Midpoint quadrature over regions of a grid.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Grid, Region};
use crate::sum::Kahan;

/// `∫_region f` by the midpoint rule: the sum over domain cells whose centre
/// lies in the region, in lexicographic order, times the cell volume.
pub fn integrate(f: &ScalarField, region: &Region) -> Result<f64> {
    integrate_values(&f.grid, &f.values, region)
}

pub fn integrate_values(grid: &Grid, values: &[f64], region: &Region) -> Result<f64> {
    let mut acc = Kahan::new();
    let mut hit = false;
    region.for_each_cell(grid, |i| {
        hit = true;
        acc.add(grid.weight(i) * values[i]);
    });
    if !hit {
        return Err(Error::EmptyRegion);
    }
    Ok(acc.value() * grid.cell_volume())
}

/// Measure of the region's intersection with the domain, by the same rule.
pub fn measure(grid: &Grid, region: &Region) -> Result<f64> {
    let mut acc = Kahan::new();
    let mut hit = false;
    region.for_each_cell(grid, |i| {
        hit = true;
        acc.add(grid.weight(i));
    });
    if !hit {
        return Err(Error::EmptyRegion);
    }
    Ok(acc.value() * grid.cell_volume())
}

/// Average of `f` over the region.
pub fn average(f: &ScalarField, region: &Region) -> Result<f64> {
    Ok(integrate(f, region)? / measure(&f.grid, region)?)
}
