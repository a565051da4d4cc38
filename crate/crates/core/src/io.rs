//! Text formats for patterns, chains, rasters, and region tables.
//!
//! Floating-point values are written with the shortest representation that
//! parses back to the same bits, so every write/read pair is an exact
//! round-trip. Readers report failures with one-based line numbers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{LgcpError, Result};
use crate::grid::{PointPattern, Window};
use crate::mcmc::PosteriorSamples;
use crate::predict::Raster;

fn parse_err(line: usize, message: impl Into<String>) -> LgcpError {
    LgcpError::Parse { line, message: message.into() }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| {
        LgcpError::invalid(format!("cannot open {}: {e}", path.display()))
    })?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| {
        LgcpError::invalid(format!("cannot create {}: {e}", path.display()))
    })?;
    Ok(BufWriter::new(file))
}

fn parse_f64(token: &str, line: usize, what: &str) -> Result<f64> {
    token
        .trim()
        .parse::<f64>()
        .map_err(|_| parse_err(line, format!("{what} `{}` is not a number", token.trim())))
}

/// Writes a point pattern as CSV with header `x,y[,mark][,t]`.
pub fn write_pattern<W: Write>(w: &mut W, pattern: &PointPattern) -> Result<()> {
    let marks = pattern.marks();
    let times = pattern.times();
    let header = match (marks.is_some(), times.is_some()) {
        (false, false) => "x,y",
        (true, false) => "x,y,mark",
        (false, true) => "x,y,t",
        (true, true) => "x,y,mark,t",
    };
    writeln!(w, "{header}")?;
    for i in 0..pattern.n() {
        write!(w, "{},{}", pattern.xs()[i], pattern.ys()[i])?;
        if let Some(m) = marks {
            write!(w, ",{}", m[i])?;
        }
        if let Some(t) = times {
            write!(w, ",{}", t[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_pattern_csv(path: &Path, pattern: &PointPattern) -> Result<()> {
    let mut w = create(path)?;
    write_pattern(&mut w, pattern)?;
    w.flush()?;
    Ok(())
}

/// Reads a point pattern from CSV. The header decides which optional
/// columns are present; marks must label types `1..=m` and times must be
/// integer steps `1..=T`, with `m` and `T` taken from the largest values
/// seen.
pub fn read_pattern<R: BufRead>(r: R, window: Window) -> Result<PointPattern> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file, expected a header")),
    };
    let cols: Vec<String> =
        header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let (has_mark, has_time) = match cols
        .iter()
        .map(String::as_str)
        .collect::<Vec<_>>()
        .as_slice()
    {
        ["x", "y"] => (false, false),
        ["x", "y", "mark"] => (true, false),
        ["x", "y", "t"] => (false, true),
        ["x", "y", "mark", "t"] => (true, true),
        _ => {
            return Err(parse_err(
                1,
                format!("header `{header}` is not x,y[,mark][,t]"),
            ))
        }
    };
    let expected = cols.len();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut marks = Vec::new();
    let mut times = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != expected {
            return Err(parse_err(
                lineno,
                format!("expected {expected} fields, found {}", fields.len()),
            ));
        }
        xs.push(parse_f64(fields[0], lineno, "x")?);
        ys.push(parse_f64(fields[1], lineno, "y")?);
        let mut next = 2;
        if has_mark {
            let m = fields[next].trim().parse::<u32>().map_err(|_| {
                parse_err(lineno, format!("mark `{}` is not a positive integer", fields[next].trim()))
            })?;
            marks.push(m);
            next += 1;
        }
        if has_time {
            times.push(parse_f64(fields[next], lineno, "t")?);
        }
    }

    let mut pattern = PointPattern::new(window, xs, ys)?;
    if has_mark {
        let n_types = marks.iter().copied().max().unwrap_or(0).max(2) as usize;
        pattern = pattern.with_marks(marks, n_types)?;
    }
    if has_time {
        let n_steps = times.iter().fold(0.0_f64, |a, &b| a.max(b)).max(1.0) as usize;
        pattern = pattern.with_times(times, n_steps)?;
    }
    Ok(pattern)
}

pub fn read_pattern_csv(path: &Path, window: Window) -> Result<PointPattern> {
    read_pattern(open(path)?, window)
}

/// Writes retained draws as CSV with header `iter,logpost,beta0,...,sigma,phi`.
pub fn write_chain<W: Write>(w: &mut W, samples: &PosteriorSamples) -> Result<()> {
    let p = samples.beta.first().map_or(0, Vec::len);
    write!(w, "iter,logpost")?;
    for j in 0..p {
        write!(w, ",beta{j}")?;
    }
    writeln!(w, ",sigma,phi")?;
    for i in 0..samples.n_retained() {
        write!(w, "{},{}", samples.iterations[i], samples.log_posterior[i])?;
        for b in &samples.beta[i] {
            write!(w, ",{b}")?;
        }
        writeln!(w, ",{},{}", samples.sigma[i], samples.phi[i])?;
    }
    Ok(())
}

pub fn write_chain_csv(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    let mut w = create(path)?;
    write_chain(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

/// Parameter draws reloaded from a chain CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTable {
    pub iterations: Vec<u64>,
    pub log_posterior: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub phi: Vec<f64>,
}

pub fn read_chain<R: BufRead>(r: R) -> Result<ChainTable> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file, expected a header")),
    };
    let cols: Vec<String> =
        header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let p = cols.len().saturating_sub(4);
    let mut expect = vec!["iter".to_string(), "logpost".to_string()];
    for j in 0..p {
        expect.push(format!("beta{j}"));
    }
    expect.push("sigma".to_string());
    expect.push("phi".to_string());
    if cols != expect {
        return Err(parse_err(
            1,
            format!("header `{header}` is not iter,logpost,beta..,sigma,phi"),
        ));
    }

    let mut table = ChainTable {
        iterations: Vec::new(),
        log_posterior: Vec::new(),
        beta: Vec::new(),
        sigma: Vec::new(),
        phi: Vec::new(),
    };
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", cols.len(), fields.len()),
            ));
        }
        let iter = fields[0].trim().parse::<u64>().map_err(|_| {
            parse_err(lineno, format!("iter `{}` is not an integer", fields[0].trim()))
        })?;
        table.iterations.push(iter);
        table.log_posterior.push(parse_f64(fields[1], lineno, "logpost")?);
        let mut beta = Vec::with_capacity(p);
        for j in 0..p {
            beta.push(parse_f64(fields[2 + j], lineno, "beta")?);
        }
        table.beta.push(beta);
        table.sigma.push(parse_f64(fields[2 + p], lineno, "sigma")?);
        table.phi.push(parse_f64(fields[3 + p], lineno, "phi")?);
    }
    Ok(table)
}

pub fn read_chain_csv(path: &Path) -> Result<ChainTable> {
    read_chain(open(path)?)
}

/// Writes the retained latent-field draws as CSV with header
/// `iter,s0,s1,...`; fields of a multitype draw stay concatenated.
pub fn write_s_samples<W: Write>(w: &mut W, samples: &PosteriorSamples) -> Result<()> {
    let k = samples.s_obs.first().map_or(0, Vec::len);
    write!(w, "iter")?;
    for j in 0..k {
        write!(w, ",s{j}")?;
    }
    writeln!(w)?;
    for i in 0..samples.n_retained() {
        write!(w, "{}", samples.iterations[i])?;
        for v in &samples.s_obs[i] {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_s_samples_csv(path: &Path, samples: &PosteriorSamples) -> Result<()> {
    let mut w = create(path)?;
    write_s_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn read_s_samples<R: BufRead>(r: R) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let mut lines = r.lines().enumerate();
    let header = match lines.next() {
        Some((_, Ok(h))) => h,
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file, expected a header")),
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first().map(|c| c.trim()) != Some("iter")
        || cols.iter().skip(1).enumerate().any(|(j, c)| c.trim() != format!("s{j}"))
    {
        return Err(parse_err(1, format!("header `{header}` is not iter,s0,s1,...")));
    }
    let k = cols.len() - 1;
    let mut iters = Vec::new();
    let mut draws = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 1 {
            return Err(parse_err(
                lineno,
                format!("expected {} fields, found {}", k + 1, fields.len()),
            ));
        }
        let iter = fields[0].trim().parse::<u64>().map_err(|_| {
            parse_err(lineno, format!("iter `{}` is not an integer", fields[0].trim()))
        })?;
        iters.push(iter);
        let mut row = Vec::with_capacity(k);
        for f in &fields[1..] {
            row.push(parse_f64(f, lineno, "s")?);
        }
        draws.push(row);
    }
    Ok((iters, draws))
}

pub fn read_s_samples_csv(path: &Path) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    read_s_samples(open(path)?)
}

/// Reassembles posterior draws from a chain CSV and its matching field-draw
/// CSV. The two files must list the same iterations in the same order;
/// `n_fields` splits the concatenated field values.
pub fn read_posterior(
    chain_path: &Path,
    s_path: &Path,
    n_fields: usize,
) -> Result<PosteriorSamples> {
    let table = read_chain_csv(chain_path)?;
    let (iters, s_obs) = read_s_samples_csv(s_path)?;
    if iters != table.iterations {
        return Err(LgcpError::invalid(format!(
            "{} and {} list different iterations",
            chain_path.display(),
            s_path.display()
        )));
    }
    if n_fields == 0 {
        return Err(LgcpError::invalid("a draw needs at least one field"));
    }
    let width = s_obs.first().map_or(0, Vec::len);
    if width % n_fields != 0 {
        return Err(LgcpError::invalid(format!(
            "{width} field values do not split into {n_fields} fields"
        )));
    }
    Ok(PosteriorSamples {
        n_fields,
        n_obs_cells: width / n_fields,
        burnin: 0,
        thin: 1,
        iterations: table.iterations,
        log_posterior: table.log_posterior,
        beta: table.beta,
        sigma: table.sigma,
        phi: table.phi,
        s_obs,
        gamma: None,
        accept_probs: Vec::new(),
        accepted: Vec::new(),
        final_step: 0.0,
    })
}

const SQUARE_CELL_TOLERANCE: f64 = 1e-9;

/// Writes a raster as an ESRI ASCII grid. The format carries a single cell
/// size, so the raster's cells must be square; rows run top to bottom.
pub fn write_raster_asc<W: Write>(w: &mut W, raster: &Raster) -> Result<()> {
    let cw = raster.cell_width();
    let ch = raster.cell_height();
    if (cw - ch).abs() > SQUARE_CELL_TOLERANCE * cw.max(ch) {
        return Err(LgcpError::invalid(format!(
            "ESRI ASCII needs square cells, got {cw} x {ch}"
        )));
    }
    writeln!(w, "ncols {}", raster.nx())?;
    writeln!(w, "nrows {}", raster.ny())?;
    writeln!(w, "xllcorner {}", raster.xll())?;
    writeln!(w, "yllcorner {}", raster.yll())?;
    writeln!(w, "cellsize {cw}")?;
    writeln!(w, "NODATA_value {}", raster.nodata())?;
    for iy in (0..raster.ny()).rev() {
        for ix in 0..raster.nx() {
            if ix > 0 {
                write!(w, " ")?;
            }
            write!(w, "{}", raster.value(ix, iy))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_raster_asc_file(path: &Path, raster: &Raster) -> Result<()> {
    let mut w = create(path)?;
    write_raster_asc(&mut w, raster)?;
    w.flush()?;
    Ok(())
}

pub fn read_raster_asc<R: BufRead>(r: R) -> Result<Raster> {
    let mut lines = r.lines().enumerate().peekable();
    let mut header_value = |key: &str| -> Result<f64> {
        match lines.next() {
            Some((idx, Ok(line))) => {
                let lineno = idx + 1;
                let mut tokens = line.split_whitespace();
                let k = tokens
                    .next()
                    .ok_or_else(|| parse_err(lineno, format!("expected `{key} <value>`")))?;
                if !k.eq_ignore_ascii_case(key) {
                    return Err(parse_err(lineno, format!("expected `{key}`, found `{k}`")));
                }
                let v = tokens
                    .next()
                    .ok_or_else(|| parse_err(lineno, format!("`{key}` has no value")))?;
                if tokens.next().is_some() {
                    return Err(parse_err(lineno, format!("trailing tokens after `{key}`")));
                }
                parse_f64(v, lineno, key)
            }
            Some((_, Err(e))) => Err(e.into()),
            None => Err(parse_err(1, format!("missing `{key}` header line"))),
        }
    };

    let ncols = header_value("ncols")? as usize;
    let nrows = header_value("nrows")? as usize;
    let xll = header_value("xllcorner")?;
    let yll = header_value("yllcorner")?;
    let cellsize = header_value("cellsize")?;
    let nodata = header_value("NODATA_value")?;

    if ncols == 0 || nrows == 0 {
        return Err(parse_err(1, "raster must have at least one row and column"));
    }
    let mut values = vec![0.0; ncols * nrows];
    let mut filled = 0usize;
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        for token in line.split_whitespace() {
            if filled == ncols * nrows {
                return Err(parse_err(lineno, "more values than ncols x nrows"));
            }
            let row = filled / ncols;
            let col = filled % ncols;
            let iy = nrows - 1 - row;
            values[iy * ncols + col] = parse_f64(token, lineno, "value")?;
            filled += 1;
        }
    }
    if filled != ncols * nrows {
        return Err(parse_err(
            0,
            format!("expected {} values, found {filled}", ncols * nrows),
        ));
    }
    Raster::from_parts(ncols, nrows, xll, yll, cellsize, cellsize, nodata, values)
}

pub fn read_raster_asc_file(path: &Path) -> Result<Raster> {
    read_raster_asc(open(path)?)
}

/// Writes a raster as CSV with header `ix,iy,value`, cells in row-major
/// order. This format carries indices only; geometry comes from the run's
/// grid configuration.
pub fn write_raster_csv<W: Write>(w: &mut W, raster: &Raster) -> Result<()> {
    writeln!(w, "ix,iy,value")?;
    for iy in 0..raster.ny() {
        for ix in 0..raster.nx() {
            writeln!(w, "{ix},{iy},{}", raster.value(ix, iy))?;
        }
    }
    Ok(())
}

pub fn write_raster_csv_file(path: &Path, raster: &Raster) -> Result<()> {
    let mut w = create(path)?;
    write_raster_csv(&mut w, raster)?;
    w.flush()?;
    Ok(())
}

/// Reads an `ix,iy,value` raster. Every cell of the bounding index box must
/// appear exactly once. The result uses unit cells anchored at the origin.
pub fn read_raster_csv<R: BufRead>(r: R) -> Result<Raster> {
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim().eq_ignore_ascii_case("ix,iy,value") => {}
        Some((_, Ok(h))) => {
            return Err(parse_err(1, format!("header `{h}` is not ix,iy,value")))
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file, expected a header")),
    }
    let mut cells: Vec<(usize, usize, f64, usize)> = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let ix = fields[0].trim().parse::<usize>().map_err(|_| {
            parse_err(lineno, format!("ix `{}` is not an index", fields[0].trim()))
        })?;
        let iy = fields[1].trim().parse::<usize>().map_err(|_| {
            parse_err(lineno, format!("iy `{}` is not an index", fields[1].trim()))
        })?;
        let v = parse_f64(fields[2], lineno, "value")?;
        cells.push((ix, iy, v, lineno));
    }
    if cells.is_empty() {
        return Err(parse_err(1, "raster CSV has no cells"));
    }
    let nx = cells.iter().map(|c| c.0).max().unwrap() + 1;
    let ny = cells.iter().map(|c| c.1).max().unwrap() + 1;
    let mut values = vec![f64::NAN; nx * ny];
    let mut seen = vec![false; nx * ny];
    for (ix, iy, v, lineno) in cells {
        let i = iy * nx + ix;
        if seen[i] {
            return Err(parse_err(lineno, format!("cell ({ix}, {iy}) appears twice")));
        }
        seen[i] = true;
        values[i] = v;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(LgcpError::invalid(format!(
            "cell ({}, {}) is missing from the raster CSV",
            i % nx,
            i / nx
        )));
    }
    Raster::from_parts(nx, ny, 0.0, 0.0, 1.0, 1.0, crate::predict::NODATA, values)
}

pub fn read_raster_csv_file(path: &Path) -> Result<Raster> {
    read_raster_csv(open(path)?)
}

/// Writes region totals as CSV with header `region_id,count`.
pub fn write_region_counts<W: Write>(w: &mut W, counts: &[(u32, u64)]) -> Result<()> {
    writeln!(w, "region_id,count")?;
    for (id, count) in counts {
        writeln!(w, "{id},{count}")?;
    }
    Ok(())
}

pub fn write_region_counts_csv(path: &Path, counts: &[(u32, u64)]) -> Result<()> {
    let mut w = create(path)?;
    write_region_counts(&mut w, counts)?;
    w.flush()?;
    Ok(())
}

/// Reads `region_id,count` rows; region ids must be unique.
pub fn read_region_counts<R: BufRead>(r: R) -> Result<Vec<(u32, u64)>> {
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h.trim().eq_ignore_ascii_case("region_id,count") => {}
        Some((_, Ok(h))) => {
            return Err(parse_err(1, format!("header `{h}` is not region_id,count")))
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(parse_err(1, "empty file, expected a header")),
    }
    let mut out: Vec<(u32, u64)> = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(parse_err(lineno, format!("expected 2 fields, found {}", fields.len())));
        }
        let id = fields[0].trim().parse::<u32>().map_err(|_| {
            parse_err(lineno, format!("region_id `{}` is not an integer", fields[0].trim()))
        })?;
        let count = fields[1].trim().parse::<u64>().map_err(|_| {
            parse_err(lineno, format!("count `{}` is not a nonnegative integer", fields[1].trim()))
        })?;
        if out.iter().any(|(seen, _)| *seen == id) {
            return Err(parse_err(lineno, format!("region_id {id} appears twice")));
        }
        out.push((id, count));
    }
    Ok(out)
}

pub fn read_region_counts_csv(path: &Path) -> Result<Vec<(u32, u64)>> {
    read_region_counts(open(path)?)
}

/// Writes the K-function comparison table with header `u,k_hat,k_model`.
pub fn write_k_table<W: Write>(
    w: &mut W,
    us: &[f64],
    k_hat: &[f64],
    k_model: &[f64],
) -> Result<()> {
    if us.len() != k_hat.len() || us.len() != k_model.len() {
        return Err(LgcpError::invalid("K table columns must share a length"));
    }
    writeln!(w, "u,k_hat,k_model")?;
    for i in 0..us.len() {
        writeln!(w, "{},{},{}", us[i], k_hat[i], k_model[i])?;
    }
    Ok(())
}

pub fn write_k_table_csv(path: &Path, us: &[f64], k_hat: &[f64], k_model: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    write_k_table(&mut w, us, k_hat, k_model)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn window() -> Window {
        Window::new(0.0, 0.0, 10.0, 5.0).unwrap()
    }

    fn write_to_string(f: impl FnOnce(&mut Vec<u8>)) -> String {
        let mut buf = Vec::new();
        f(&mut buf);
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn pattern_round_trip_is_bitwise_exact() {
        let xs = vec![0.1 + 0.2, 1.0 / 3.0, 9.999999999999998, 5e-300 * 1e300];
        let ys = vec![4.999999999999999, 0.0, 2.5000000000000004, 1.2345678901234567];
        let pattern = PointPattern::new(window(), xs, ys).unwrap();
        let text = write_to_string(|b| write_pattern(b, &pattern).unwrap());
        let back = read_pattern(text.as_bytes(), window()).unwrap();
        assert_eq!(back.n(), pattern.n());
        for i in 0..pattern.n() {
            assert_eq!(back.xs()[i].to_bits(), pattern.xs()[i].to_bits());
            assert_eq!(back.ys()[i].to_bits(), pattern.ys()[i].to_bits());
        }
    }

    #[test]
    fn marked_and_timed_patterns_keep_their_columns() {
        let pattern = PointPattern::new(window(), vec![1.0, 2.0], vec![1.0, 2.0])
            .unwrap()
            .with_marks(vec![1, 2], 2)
            .unwrap()
            .with_times(vec![3.0, 1.0], 3)
            .unwrap();
        let text = write_to_string(|b| write_pattern(b, &pattern).unwrap());
        assert!(text.starts_with("x,y,mark,t\n"));
        let back = read_pattern(text.as_bytes(), window()).unwrap();
        assert_eq!(back.marks().unwrap(), &[1, 2]);
        assert_eq!(back.times().unwrap(), &[3.0, 1.0]);
        assert_eq!(back.n_types(), 2);
    }

    #[test]
    fn empty_pattern_writes_header_only() {
        let pattern = PointPattern::new(window(), vec![], vec![]).unwrap();
        let text = write_to_string(|b| write_pattern(b, &pattern).unwrap());
        assert_eq!(text, "x,y\n");
        assert_eq!(read_pattern(text.as_bytes(), window()).unwrap().n(), 0);
    }

    #[test]
    fn pattern_errors_carry_line_numbers() {
        let bad_header = "lon,lat\n1,2\n";
        match read_pattern(bad_header.as_bytes(), window()) {
            Err(LgcpError::Parse { line: 1, .. }) => {}
            other => panic!("expected header parse error, got {other:?}"),
        }
        let bad_row = "x,y\n1,2\n3,oops\n";
        match read_pattern(bad_row.as_bytes(), window()) {
            Err(LgcpError::Parse { line: 3, message }) => {
                assert!(message.contains("oops"));
            }
            other => panic!("expected row parse error, got {other:?}"),
        }
        let short_row = "x,y,mark\n1,2\n";
        match read_pattern(short_row.as_bytes(), window()) {
            Err(LgcpError::Parse { line: 2, .. }) => {}
            other => panic!("expected field-count error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_window_points_are_rejected() {
        let text = "x,y\n50,1\n";
        assert!(matches!(
            read_pattern(text.as_bytes(), window()),
            Err(LgcpError::InvalidInput(_))
        ));
    }

    fn fake_samples() -> PosteriorSamples {
        PosteriorSamples {
            n_fields: 1,
            n_obs_cells: 3,
            burnin: 10,
            thin: 2,
            iterations: vec![2, 4, 6],
            log_posterior: vec![-1.5, -1.25, -1.0],
            beta: vec![vec![0.1, -0.2], vec![0.3, 0.0], vec![1.0 / 3.0, 2e-8]],
            sigma: vec![0.5, 0.55, 0.6],
            phi: vec![10.0, 10.5, 11.0],
            s_obs: vec![
                vec![0.01, -0.02, 0.03],
                vec![0.04, -0.05, 0.06],
                vec![0.07, -0.08, 0.09],
            ],
            gamma: None,
            accept_probs: vec![],
            accepted: vec![],
            final_step: 1.0,
        }
    }

    #[test]
    fn chain_round_trip_is_bitwise_exact() {
        let samples = fake_samples();
        let text = write_to_string(|b| write_chain(b, &samples).unwrap());
        assert!(text.starts_with("iter,logpost,beta0,beta1,sigma,phi\n"));
        let table = read_chain(text.as_bytes()).unwrap();
        assert_eq!(table.iterations, samples.iterations);
        for i in 0..3 {
            assert_eq!(table.log_posterior[i].to_bits(), samples.log_posterior[i].to_bits());
            assert_eq!(table.beta[i], samples.beta[i]);
            assert_eq!(table.sigma[i].to_bits(), samples.sigma[i].to_bits());
            assert_eq!(table.phi[i].to_bits(), samples.phi[i].to_bits());
        }
    }

    #[test]
    fn posterior_reassembles_from_both_files() {
        let samples = fake_samples();
        let chain = write_to_string(|b| write_chain(b, &samples).unwrap());
        let s = write_to_string(|b| write_s_samples(b, &samples).unwrap());
        let dir = std::env::temp_dir().join("lgcp-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let chain_path = dir.join("chain.csv");
        let s_path = dir.join("s.csv");
        std::fs::write(&chain_path, chain).unwrap();
        std::fs::write(&s_path, s).unwrap();
        let back = read_posterior(&chain_path, &s_path, 1).unwrap();
        assert_eq!(back.n_obs_cells, 3);
        assert_eq!(back.s_obs, samples.s_obs);
        assert_eq!(back.beta, samples.beta);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn esri_raster_round_trips_and_orders_rows_from_the_top() {
        let grid =
            GridSpec::build(Window::new(0.0, 0.0, 2.0, 1.5).unwrap(), 4, 3, 2.0).unwrap();
        let values: Vec<f64> = (0..12).map(|i| i as f64 * 0.125 - 0.3).collect();
        let raster = Raster::over_grid(&grid, values.clone()).unwrap();
        let text = write_to_string(|b| write_raster_asc(b, &raster).unwrap());
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "ncols 4");
        assert_eq!(lines.next().unwrap(), "nrows 3");
        assert_eq!(lines.next().unwrap(), "xllcorner 0");
        assert_eq!(lines.next().unwrap(), "yllcorner 0");
        assert_eq!(lines.next().unwrap(), "cellsize 0.5");
        assert_eq!(lines.next().unwrap(), "NODATA_value -9999");
        // First data row is the top row (iy = 2): values 8..12.
        assert_eq!(lines.next().unwrap(), "0.7 0.825 0.95 1.075");
        let back = read_raster_asc(text.as_bytes()).unwrap();
        assert_eq!(back, raster);
    }

    #[test]
    fn esri_rejects_rectangular_cells() {
        let grid =
            GridSpec::build(Window::new(0.0, 0.0, 2.0, 1.0).unwrap(), 4, 3, 2.0).unwrap();
        let raster = Raster::filled(&grid, 0.0);
        let mut buf = Vec::new();
        assert!(matches!(
            write_raster_asc(&mut buf, &raster),
            Err(LgcpError::InvalidInput(_))
        ));
    }

    #[test]
    fn esri_read_reports_bad_headers_and_short_bodies() {
        let missing = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2\n";
        assert!(read_raster_asc(missing.as_bytes()).is_err());
        let bad_key = "cols 2\n";
        match read_raster_asc(bad_key.as_bytes()) {
            Err(LgcpError::Parse { line: 1, .. }) => {}
            other => panic!("expected header error, got {other:?}"),
        }
        let bad_value = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 x\n";
        match read_raster_asc(bad_value.as_bytes()) {
            Err(LgcpError::Parse { line: 7, .. }) => {}
            other => panic!("expected value error, got {other:?}"),
        }
    }

    #[test]
    fn csv_raster_round_trips_and_validates_coverage() {
        let grid =
            GridSpec::build(Window::new(0.0, 0.0, 3.0, 2.0).unwrap(), 3, 2, 2.0).unwrap();
        let values: Vec<f64> = (0..6).map(|i| (i as f64).sqrt()).collect();
        let raster = Raster::over_grid(&grid, values.clone()).unwrap();
        let text = write_to_string(|b| write_raster_csv(b, &raster).unwrap());
        assert!(text.starts_with("ix,iy,value\n0,0,0\n1,0,1\n"));
        let back = read_raster_csv(text.as_bytes()).unwrap();
        assert_eq!(back.values(), raster.values());
        assert_eq!(back.nx(), 3);
        assert_eq!(back.ny(), 2);

        let missing = "ix,iy,value\n0,0,1\n1,1,2\n";
        assert!(read_raster_csv(missing.as_bytes()).is_err());
        let dup = "ix,iy,value\n0,0,1\n0,0,2\n";
        match read_raster_csv(dup.as_bytes()) {
            Err(LgcpError::Parse { line: 3, .. }) => {}
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn region_counts_round_trip_and_reject_duplicates() {
        let counts = vec![(1, 10), (2, 0), (7, 55)];
        let text = write_to_string(|b| write_region_counts(b, &counts).unwrap());
        assert_eq!(text, "region_id,count\n1,10\n2,0\n7,55\n");
        assert_eq!(read_region_counts(text.as_bytes()).unwrap(), counts);
        let dup = "region_id,count\n1,10\n1,11\n";
        match read_region_counts(dup.as_bytes()) {
            Err(LgcpError::Parse { line: 3, .. }) => {}
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn k_table_lists_all_three_columns() {
        let text = write_to_string(|b| {
            write_k_table(b, &[0.1, 0.2], &[0.05, 0.14], &[0.031, 0.126]).unwrap()
        });
        assert_eq!(text, "u,k_hat,k_model\n0.1,0.05,0.031\n0.2,0.14,0.126\n");
        let mut buf = Vec::new();
        assert!(write_k_table(&mut buf, &[0.1], &[0.1, 0.2], &[0.1]).is_err());
    }
}
