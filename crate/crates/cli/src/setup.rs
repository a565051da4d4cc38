//! Shared translation from config values to model objects.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use lgcp::covariance::{CorrelationFamily, CovarianceModel};
use lgcp::grid::{GridSpec, Window};
use lgcp::io;
use lgcp::predict::Raster;

use crate::config::Config;
use crate::manifest::RunManifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unitype,
    Multitype,
    Aggregated,
    Spacetime,
}

pub fn model_kind(cfg: &Config) -> Result<ModelKind> {
    match cfg.get("model.kind").unwrap_or("unitype") {
        "unitype" => Ok(ModelKind::Unitype),
        "multitype" => Ok(ModelKind::Multitype),
        "aggregated" => Ok(ModelKind::Aggregated),
        "spacetime" => Ok(ModelKind::Spacetime),
        other => Err(anyhow!(
            "config key `model.kind`: `{other}` is not one of unitype, multitype, aggregated, spacetime"
        )),
    }
}

pub fn window_from_config(cfg: &Config) -> Result<Window> {
    Ok(Window::new(
        cfg.require_f64("grid.xmin")?,
        cfg.require_f64("grid.ymin")?,
        cfg.require_f64("grid.xmax")?,
        cfg.require_f64("grid.ymax")?,
    )?)
}

pub fn grid_from_config(cfg: &Config) -> Result<GridSpec> {
    let window = window_from_config(cfg)?;
    let nx = cfg.require_usize("grid.nx")?;
    let ny = cfg.require_usize("grid.ny")?;
    let extension = cfg.f64_or("grid.extension", 2.0)?;
    Ok(GridSpec::build(window, nx, ny, extension)?)
}

pub fn family_from_config(cfg: &Config) -> Result<CorrelationFamily> {
    match cfg.get("cov.family").unwrap_or("exponential") {
        "exponential" => {
            if cfg.get("cov.kappa").is_some() {
                bail!("config key `cov.kappa` only applies to the matern family");
            }
            Ok(CorrelationFamily::Exponential)
        }
        "matern" => {
            let kappa = cfg.require_f64("cov.kappa")?;
            Ok(CorrelationFamily::Matern { kappa })
        }
        other => Err(anyhow!(
            "config key `cov.family`: `{other}` is not one of exponential, matern"
        )),
    }
}

/// Covariance from `cov.sigma` (field standard deviation) and `cov.phi`.
pub fn covariance_from_config(cfg: &Config) -> Result<CovarianceModel> {
    let family = family_from_config(cfg)?;
    let sigma = cfg.require_f64("cov.sigma")?;
    let phi = cfg.require_f64("cov.phi")?;
    Ok(CovarianceModel::with_family(family, sigma * sigma, phi)?)
}

/// Covariance only if both `cov.sigma` and `cov.phi` are present.
pub fn covariance_if_given(cfg: &Config) -> Result<Option<CovarianceModel>> {
    match (cfg.get("cov.sigma"), cfg.get("cov.phi")) {
        (Some(_), Some(_)) => Ok(Some(covariance_from_config(cfg)?)),
        (None, None) => Ok(None),
        _ => bail!("config keys `cov.sigma` and `cov.phi` must be given together"),
    }
}

/// Reads a per-cell raster (`.asc` or `.csv` by extension) and checks that it
/// lies on `grid`. ASC files carry geometry, which must match the grid; CSV
/// rasters carry only the cell lattice, so just the shape is checked.
pub fn read_raster_on_grid(path: &Path, grid: &GridSpec) -> Result<Raster> {
    let raster = match path.extension().and_then(|e| e.to_str()) {
        Some("asc") => io::read_raster_asc_file(path)?,
        Some("csv") => io::read_raster_csv_file(path)?,
        _ => bail!("{}: raster files must end in .asc or .csv", path.display()),
    };
    if raster.nx() != grid.nx() || raster.ny() != grid.ny() {
        bail!(
            "{}: raster is {} x {} but the grid is {} x {}",
            path.display(),
            raster.nx(),
            raster.ny(),
            grid.nx(),
            grid.ny()
        );
    }
    if path.extension().and_then(|e| e.to_str()) == Some("asc") {
        let w = grid.window();
        let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-9 * scale.abs().max(1.0);
        if !(close(raster.xll(), w.xmin, w.width())
            && close(raster.yll(), w.ymin, w.height())
            && close(raster.cell_width(), grid.cell_width(), grid.cell_width())
            && close(raster.cell_height(), grid.cell_height(), grid.cell_height()))
        {
            bail!("{}: raster geometry does not match the configured grid", path.display());
        }
    }
    Ok(raster)
}

/// Offset surface from `model.offset`, defaulting to one everywhere.
/// Cells marked nodata get offset zero, which removes them from the
/// likelihood the same way an observed zero-rate region would.
pub fn offset_from_config(
    cfg: &Config,
    grid: &GridSpec,
    manifest: &mut RunManifest,
) -> Result<Vec<f64>> {
    match cfg.get("model.offset") {
        None => Ok(vec![1.0; grid.n_cells()]),
        Some(path) => {
            let path = PathBuf::from(path);
            let raster = read_raster_on_grid(&path, grid)
                .with_context(|| format!("offset raster {}", path.display()))?;
            manifest.add_input(&path)?;
            let nodata = raster.nodata();
            Ok(raster
                .values()
                .iter()
                .map(|&v| if v == nodata { 0.0 } else { v })
                .collect())
        }
    }
}

/// Covariate surfaces from `model.covariates`, a comma-separated list of
/// raster paths. Returns the file stems (used to label effect estimates)
/// alongside the per-cell columns.
pub fn covariates_from_config(
    cfg: &Config,
    grid: &GridSpec,
    manifest: &mut RunManifest,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let Some(paths) = cfg.str_list_opt("model.covariates")? else {
        return Ok((Vec::new(), Vec::new()));
    };
    let mut names = Vec::with_capacity(paths.len());
    let mut columns = Vec::with_capacity(paths.len());
    for p in paths {
        let path = PathBuf::from(&p);
        let raster = read_raster_on_grid(&path, grid)
            .with_context(|| format!("covariate raster {}", path.display()))?;
        manifest.add_input(&path)?;
        if raster.values().iter().any(|&v| v == raster.nodata()) {
            bail!("covariate raster {} has nodata cells", path.display());
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
            .unwrap_or_else(|| p.clone());
        names.push(stem);
        columns.push(raster.values().to_vec());
    }
    Ok((names, columns))
}

/// Regression coefficients from `model.beta0`: a single number, or a comma
/// list (intercept then covariate coefficients; for multitype models one
/// intercept per type).
pub fn beta_from_config(cfg: &Config) -> Result<Option<Vec<f64>>> {
    cfg.f64_list_opt("model.beta0")
}

/// Writes a surface next to the other artifacts, as ESRI ASCII when the
/// cells are square and as a cell-indexed CSV otherwise. Returns the path.
pub fn write_surface(dir: &Path, stem: &str, raster: &Raster) -> Result<PathBuf> {
    let square = (raster.cell_width() - raster.cell_height()).abs()
        <= 1e-9 * raster.cell_width().abs().max(raster.cell_height().abs());
    let path = dir.join(format!("{stem}.{}", if square { "asc" } else { "csv" }));
    if square {
        io::write_raster_asc_file(&path, raster)?;
    } else {
        io::write_raster_csv_file(&path, raster)?;
    }
    Ok(path)
}

/// Formats a threshold or level for use in a file name: shortest exact
/// decimal, with any '.' kept (e.g. 2 -> "2", 1.1 -> "1.1").
pub fn level_tag(x: f64) -> String {
    format!("{x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_cfg(extra: &str) -> Config {
        let text = format!(
            "grid.xmin = 0\ngrid.ymin = 0\ngrid.xmax = 10\ngrid.ymax = 5\n\
             grid.nx = 8\ngrid.ny = 4\n{extra}"
        );
        Config::parse(&text).unwrap()
    }

    #[test]
    fn grid_and_window_come_from_config() {
        let cfg = base_cfg("");
        let grid = grid_from_config(&cfg).unwrap();
        assert_eq!((grid.nx(), grid.ny()), (8, 4));
        assert_eq!(grid.extension_factor(), 2.0);
        assert_eq!(grid.window().area(), 50.0);
    }

    #[test]
    fn family_validation_catches_mismatched_kappa() {
        let cfg = base_cfg("cov.family = exponential\ncov.kappa = 1.5\n");
        assert!(family_from_config(&cfg).is_err());
        let cfg = base_cfg("cov.family = matern\n");
        assert!(family_from_config(&cfg).is_err());
        let cfg = base_cfg("cov.family = matern\ncov.kappa = 1.5\n");
        assert!(matches!(
            family_from_config(&cfg).unwrap(),
            CorrelationFamily::Matern { kappa } if kappa == 1.5
        ));
    }

    #[test]
    fn sigma_means_standard_deviation() {
        let cfg = base_cfg("cov.sigma = 0.5\ncov.phi = 2\n");
        let cov = covariance_from_config(&cfg).unwrap();
        assert_eq!(cov.sigma2, 0.25);
        assert_eq!(cov.phi, 2.0);
    }

    #[test]
    fn covariance_if_given_requires_both_or_neither() {
        assert!(covariance_if_given(&base_cfg("")).unwrap().is_none());
        assert!(covariance_if_given(&base_cfg("cov.sigma = 1\n")).is_err());
        assert!(covariance_if_given(&base_cfg("cov.sigma = 1\ncov.phi = 2\n"))
            .unwrap()
            .is_some());
    }

    #[test]
    fn level_tags_are_shortest_decimals() {
        assert_eq!(level_tag(2.0), "2");
        assert_eq!(level_tag(1.1), "1.1");
        assert_eq!(level_tag(97.5), "97.5");
    }

    #[test]
    fn raster_shape_is_checked_against_the_grid() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_cfg("");
        let grid = grid_from_config(&cfg).unwrap();
        let bad = Raster::from_parts(3, 2, 0.0, 0.0, 1.0, 1.0, -9999.0, vec![0.0; 6]).unwrap();
        let path = dir.path().join("bad.csv");
        io::write_raster_csv_file(&path, &bad).unwrap();
        let err = read_raster_on_grid(&path, &grid).unwrap_err().to_string();
        assert!(err.contains("3 x 2"), "{err}");
    }
}
