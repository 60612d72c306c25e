//! Reading raw performance records and preparing grouped speed samples.
//!
//! The pipeline is: parse a CSV of `(athlete, time)` rows, optionally cap
//! the number of records per athlete, smooth ties introduced by coarse
//! timing resolution, convert times to speeds, and group observations by
//! athlete into a [`SpeedSample`]. Order matters: capping happens on raw
//! times, smoothing happens after capping (so the cap sees the recorded
//! values), and grouping is last.

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CellError, Error, Result, Warning};

/// Conversion factor between m/s and km/h.
const KMH_PER_METER_PER_SECOND: f64 = 3.6;

/// Exact-grid tolerance used when checking that times sit on the timing
/// resolution grid.
const GRID_TOLERANCE: f64 = 1e-9;

/// One raw performance record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    /// Identifier grouping repeated observations of the same athlete.
    pub athlete_id: String,
    /// Recorded time in seconds. Always positive and finite.
    pub time_s: f64,
    /// Wind reading in m/s, if the source recorded one.
    pub wind: Option<f64>,
    /// Year of the performance, if recorded.
    pub year: Option<i32>,
}

/// Column mapping for CSV ingestion.
///
/// `athlete` and `time` are required; `wind` and `year` name optional
/// columns that, when absent from the header, simply leave the
/// corresponding fields unset on every row.
#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub athlete: String,
    pub time: String,
    pub wind: Option<String>,
    pub year: Option<String>,
}

impl Default for CsvSpec {
    fn default() -> Self {
        CsvSpec {
            athlete: "athlete_id".into(),
            time: "time_s".into(),
            wind: Some("wind".into()),
            year: Some("year".into()),
        }
    }
}

/// An ordered table of raw records.
///
/// Row order is meaningful: it is the tie-break of last resort during
/// smoothing, and "row N" in error messages means the N-th data record of
/// this table (1-based, header not counted).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordTable {
    rows: Vec<RecordRow>,
}

impl RecordTable {
    /// Builds a table directly from rows, validating time positivity.
    pub fn from_rows(rows: Vec<RecordRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if !row.time_s.is_finite() || row.time_s <= 0.0 {
                return Err(Error::NonPositiveTime { row: i + 1, time: row.time_s });
            }
        }
        Ok(RecordTable { rows })
    }

    /// Parses a CSV file using the given column mapping.
    pub fn from_csv_path(path: impl AsRef<Path>, spec: &CsvSpec) -> Result<Self> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let file = File::open(path).map_err(|e| Error::io(&label, e))?;
        Self::from_csv_reader(file, spec, &label)
    }

    /// Parses CSV from any reader. `label` names the source in error
    /// messages (a path, typically).
    ///
    /// Every malformed cell in the file is collected and reported at once
    /// rather than stopping at the first; non-positive and non-finite
    /// times count as malformed.
    pub fn from_csv_reader(reader: impl Read, spec: &CsvSpec, label: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::Csv { path: label.to_string(), source: e })?
            .clone();

        let col = |name: &str| headers.iter().position(|h| h == name);
        let athlete_idx = col(&spec.athlete)
            .ok_or_else(|| Error::MissingColumn { name: spec.athlete.clone() })?;
        let time_idx =
            col(&spec.time).ok_or_else(|| Error::MissingColumn { name: spec.time.clone() })?;
        let wind_idx = spec.wind.as_deref().and_then(col);
        let year_idx = spec.year.as_deref().and_then(col);

        let mut rows = Vec::new();
        let mut bad = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let row_no = i + 1;
            let record = record.map_err(|e| Error::Csv { path: label.to_string(), source: e })?;
            let cell = |idx: usize| record.get(idx).unwrap_or("").trim();

            let athlete = cell(athlete_idx);
            if athlete.is_empty() {
                bad.push(CellError {
                    row: row_no,
                    column: spec.athlete.clone(),
                    value: athlete.into(),
                });
            }

            let time_raw = cell(time_idx);
            let time = match time_raw.parse::<f64>() {
                Ok(t) if t.is_finite() && t > 0.0 => Some(t),
                _ => {
                    bad.push(CellError {
                        row: row_no,
                        column: spec.time.clone(),
                        value: time_raw.into(),
                    });
                    None
                }
            };

            let wind = match wind_idx {
                Some(idx) => {
                    let raw = cell(idx);
                    if raw.is_empty() {
                        None
                    } else {
                        match raw.parse::<f64>() {
                            Ok(w) if w.is_finite() => Some(w),
                            _ => {
                                bad.push(CellError {
                                    row: row_no,
                                    column: spec.wind.clone().unwrap(),
                                    value: raw.into(),
                                });
                                None
                            }
                        }
                    }
                }
                None => None,
            };

            let year = match year_idx {
                Some(idx) => {
                    let raw = cell(idx);
                    if raw.is_empty() {
                        None
                    } else {
                        match raw.parse::<i32>() {
                            Ok(y) => Some(y),
                            Err(_) => {
                                bad.push(CellError {
                                    row: row_no,
                                    column: spec.year.clone().unwrap(),
                                    value: raw.into(),
                                });
                                None
                            }
                        }
                    }
                }
                None => None,
            };

            if let Some(time_s) = time {
                rows.push(RecordRow { athlete_id: athlete.to_string(), time_s, wind, year });
            }
        }

        if !bad.is_empty() {
            return Err(Error::InvalidCells { cells: bad });
        }
        Ok(RecordTable { rows })
    }

    pub fn rows(&self) -> &[RecordRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Keeps at most `cap` records per athlete: the `cap` smallest times,
    /// with earlier rows winning ties. Surviving rows keep their original
    /// relative order.
    pub fn cap_per_athlete(&self, cap: usize) -> Result<RecordTable> {
        if cap == 0 {
            return Err(Error::invalid("cap must be at least 1"));
        }
        let mut by_athlete: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            by_athlete.entry(row.athlete_id.as_str()).or_default().push(i);
        }

        let mut keep = vec![false; self.rows.len()];
        for indices in by_athlete.values() {
            let mut ranked = indices.clone();
            // Stable sort: among equal times the earlier row is kept.
            ranked.sort_by(|&a, &b| self.rows[a].time_s.partial_cmp(&self.rows[b].time_s).unwrap());
            for &idx in ranked.iter().take(cap) {
                keep[idx] = true;
            }
        }

        let rows = self
            .rows
            .iter()
            .enumerate()
            .filter(|(i, _)| keep[*i])
            .map(|(_, r)| r.clone())
            .collect();
        Ok(RecordTable { rows })
    }

    /// Spreads recorded ties evenly across their rounding interval.
    ///
    /// Official times are rounded up to `resolution` (e.g. 0.01 s), so the
    /// sample contains exact ties that rank-based estimators cannot
    /// tolerate. Within each tied group of size `m`, the row assigned
    /// position `j` (1-based) receives
    ///
    /// ```text
    /// t + resolution * (2j - 1 - m) / (2m)
    /// ```
    ///
    /// which places the `m` values at the midpoints of `m` equal slices of
    /// the interval `(t - resolution, t)` shifted to be centered on `t`'s
    /// half-step — and reduces to exactly `t` when `m = 1`. Positions are
    /// assigned by ascending wind reading (more tailwind = later = faster
    /// implied time is *not* assumed; lower wind simply ranks first), with
    /// rows missing a wind reading placed after all rows that have one, in
    /// input order.
    ///
    /// Every input time must sit on the resolution grid to within 1e-9.
    /// Output times are strictly distinct; in the astronomically unlikely
    /// event of a residual floating-point collision the later value is
    /// bumped by one ulp and a warning is emitted.
    pub fn smooth_ties(&self, resolution: f64) -> Result<(RecordTable, Vec<Warning>)> {
        if !resolution.is_finite() || resolution <= 0.0 {
            return Err(Error::invalid("resolution must be positive"));
        }

        // Validate the grid and bucket rows by grid index.
        let mut groups: HashMap<i64, Vec<usize>> = HashMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            let steps = (row.time_s / resolution).round();
            if (row.time_s - steps * resolution).abs() > GRID_TOLERANCE {
                return Err(Error::TimeOffGrid {
                    row: i + 1,
                    time: row.time_s,
                    resolution,
                });
            }
            groups.entry(steps as i64).or_default().push(i);
        }

        let mut new_times: Vec<f64> = self.rows.iter().map(|r| r.time_s).collect();
        for indices in groups.values() {
            let m = indices.len();
            if m == 1 {
                continue; // the formula is the identity; keep the bits.
            }
            // Rows with a wind reading first, ascending (stable, so equal
            // winds keep input order); wind-less rows after, in input order.
            let mut order: Vec<usize> =
                indices.iter().copied().filter(|&i| self.rows[i].wind.is_some()).collect();
            order.sort_by(|&a, &b| {
                self.rows[a].wind.unwrap().partial_cmp(&self.rows[b].wind.unwrap()).unwrap()
            });
            order.extend(indices.iter().copied().filter(|&i| self.rows[i].wind.is_none()));

            let base = self.rows[indices[0]].time_s;
            for (pos, &idx) in order.iter().enumerate() {
                let j = (pos + 1) as f64;
                new_times[idx] = base + resolution * (2.0 * j - 1.0 - m as f64) / (2.0 * m as f64);
            }
        }

        let bumps = enforce_distinct(&mut new_times);
        let mut warnings = Vec::new();
        if bumps > 0 {
            warnings.push(Warning::new(
                "tie-collision",
                format!("{bumps} smoothed time(s) collided and were bumped by one ulp"),
            ));
        }

        let rows = self
            .rows
            .iter()
            .zip(new_times)
            .map(|(r, t)| RecordRow { time_s: t, ..r.clone() })
            .collect();
        Ok((RecordTable { rows }, warnings))
    }

    /// Converts times to speeds and groups them by athlete.
    ///
    /// Athletes are sorted by `athlete_id` so the grouping is
    /// deterministic regardless of file order; within an athlete,
    /// observations keep their row order. `distance_m` is the race
    /// distance the recorded times refer to.
    pub fn group(&self, distance_m: f64) -> Result<SpeedSample> {
        let mut groups: HashMap<&str, Vec<f64>> = HashMap::new();
        for row in &self.rows {
            let speed = to_speed(row.time_s, distance_m)?;
            groups.entry(row.athlete_id.as_str()).or_default().push(speed);
        }
        let mut order: Vec<&str> = groups.keys().copied().collect();
        order.sort_unstable();

        let mut values = Vec::with_capacity(self.rows.len());
        let mut offsets = Vec::with_capacity(order.len());
        let mut sizes = Vec::with_capacity(order.len());
        for id in order {
            let g = &groups[id];
            offsets.push(values.len());
            sizes.push(g.len());
            values.extend_from_slice(g);
        }
        SpeedSample::new(values, offsets, sizes)
    }
}

/// Converts a race time (seconds) over `distance_m` meters to km/h.
pub fn to_speed(time_s: f64, distance_m: f64) -> Result<f64> {
    if !time_s.is_finite() || time_s <= 0.0 {
        return Err(Error::invalid(format!("time must be positive, got {time_s}")));
    }
    if !distance_m.is_finite() || distance_m <= 0.0 {
        return Err(Error::invalid(format!("distance must be positive, got {distance_m}")));
    }
    Ok(KMH_PER_METER_PER_SECOND * distance_m / time_s)
}

/// Converts a speed (km/h) back to a race time (seconds) over
/// `distance_m` meters. Inverse of [`to_speed`]; the round trip is exact
/// to floating-point precision.
pub fn to_time(speed_kmh: f64, distance_m: f64) -> Result<f64> {
    if !speed_kmh.is_finite() || speed_kmh <= 0.0 {
        return Err(Error::invalid(format!("speed must be positive, got {speed_kmh}")));
    }
    if !distance_m.is_finite() || distance_m <= 0.0 {
        return Err(Error::invalid(format!("distance must be positive, got {distance_m}")));
    }
    Ok(KMH_PER_METER_PER_SECOND * distance_m / speed_kmh)
}

/// How [`SpeedSample::prepare_for_lambda`] treats athletes with a single
/// observation, which the dependence estimator cannot use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingletonPolicy {
    /// Remove single-observation athletes from the sample (default).
    #[default]
    Drop,
    /// Insert a copy of the lone value, one ulp below it, so the athlete
    /// contributes a maximally-dependent pair.
    Duplicate,
}

/// Grouped speeds: a flat value array plus per-athlete extents.
///
/// `group_offsets[l]..group_offsets[l] + group_sizes[l]` indexes athlete
/// `l`'s observations inside `values`. Offsets are contiguous and
/// ascending; every size is at least 1; all speeds are positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSample")]
pub struct SpeedSample {
    values: Vec<f64>,
    group_offsets: Vec<usize>,
    group_sizes: Vec<usize>,
}

/// Serde mirror of [`SpeedSample`] without the structural invariants.
#[derive(Deserialize)]
struct RawSample {
    values: Vec<f64>,
    group_offsets: Vec<usize>,
    group_sizes: Vec<usize>,
}

impl TryFrom<RawSample> for SpeedSample {
    type Error = Error;

    fn try_from(raw: RawSample) -> Result<Self> {
        SpeedSample::new(raw.values, raw.group_offsets, raw.group_sizes)
    }
}

impl SpeedSample {
    /// Builds a sample, validating the structural invariants: contiguous
    /// ascending offsets starting at 0, sizes >= 1 summing to
    /// `values.len()`, and positive finite values.
    pub fn new(values: Vec<f64>, group_offsets: Vec<usize>, group_sizes: Vec<usize>) -> Result<Self> {
        if group_offsets.len() != group_sizes.len() {
            return Err(Error::structure(format!(
                "{} offsets but {} sizes",
                group_offsets.len(),
                group_sizes.len()
            )));
        }
        let mut expected = 0usize;
        for (l, (&off, &size)) in group_offsets.iter().zip(&group_sizes).enumerate() {
            if off != expected {
                return Err(Error::structure(format!(
                    "group {l} starts at offset {off}, expected {expected}"
                )));
            }
            if size == 0 {
                return Err(Error::structure(format!("group {l} is empty")));
            }
            expected += size;
        }
        if expected != values.len() {
            return Err(Error::structure(format!(
                "group sizes sum to {expected} but there are {} values",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::structure(format!("value {v} at index {i} is not positive")));
            }
        }
        Ok(SpeedSample { values, group_offsets, group_sizes })
    }

    /// Total number of observations.
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Number of athletes.
    pub fn p(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn group_offsets(&self) -> &[usize] {
        &self.group_offsets
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Observations of athlete `l`.
    pub fn group_values(&self, l: usize) -> &[f64] {
        let off = self.group_offsets[l];
        &self.values[off..off + self.group_sizes[l]]
    }

    /// Iterates over per-athlete observation slices.
    pub fn groups(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.p()).map(move |l| self.group_values(l))
    }

    /// Applies a [`SingletonPolicy`] so every remaining athlete has at
    /// least two observations, as the dependence estimator requires.
    ///
    /// Returns the prepared sample plus warnings describing what was done
    /// (how many athletes were dropped or duplicated). A sample with no
    /// singletons is returned unchanged.
    pub fn prepare_for_lambda(&self, policy: SingletonPolicy) -> (SpeedSample, Vec<Warning>) {
        let singleton_count = self.group_sizes.iter().filter(|&&s| s == 1).count();
        if singleton_count == 0 {
            return (self.clone(), Vec::new());
        }

        let mut values = Vec::with_capacity(self.n() + singleton_count);
        let mut offsets = Vec::with_capacity(self.p());
        let mut sizes = Vec::with_capacity(self.p());
        let mut warnings = Vec::new();

        match policy {
            SingletonPolicy::Drop => {
                for g in self.groups().filter(|g| g.len() >= 2) {
                    offsets.push(values.len());
                    sizes.push(g.len());
                    values.extend_from_slice(g);
                }
                warnings.push(Warning::new(
                    "singletons-dropped",
                    format!("{singleton_count} single-observation athlete(s) dropped"),
                ));
            }
            SingletonPolicy::Duplicate => {
                // Copies go one ulp below the original; if that slot is
                // already occupied by another value, keep stepping down so
                // the pooled sample stays strictly distinct.
                let mut taken: Vec<f64> = self.values.clone();
                taken.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let occupied = |v: f64, taken: &[f64]| {
                    taken.binary_search_by(|x| x.partial_cmp(&v).unwrap()).is_ok()
                };
                let mut extra_steps = 0usize;
                for g in self.groups() {
                    offsets.push(values.len());
                    if g.len() == 1 {
                        let mut copy = next_down(g[0]);
                        while occupied(copy, &taken) {
                            copy = next_down(copy);
                            extra_steps += 1;
                        }
                        let pos = taken
                            .binary_search_by(|x| x.partial_cmp(&copy).unwrap())
                            .unwrap_err();
                        taken.insert(pos, copy);
                        sizes.push(2);
                        values.push(g[0]);
                        values.push(copy);
                    } else {
                        sizes.push(g.len());
                        values.extend_from_slice(g);
                    }
                }
                warnings.push(Warning::new(
                    "singletons-duplicated",
                    format!(
                        "{singleton_count} single-observation athlete(s) given a duplicate \
                         one ulp below the original"
                    ),
                ));
                if extra_steps > 0 {
                    warnings.push(Warning::new(
                        "duplicate-collision",
                        format!("{extra_steps} duplicate value(s) stepped further down to stay distinct"),
                    ));
                }
            }
        }

        let sample = SpeedSample { values, group_offsets: offsets, group_sizes: sizes };
        (sample, warnings)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_json_str(&text)
    }

    /// Writes the sample as a pair of CSV files: one `value` per line, and
    /// one `offset,size` pair per athlete.
    pub fn write_csv_pair(
        &self,
        values_path: impl AsRef<Path>,
        groups_path: impl AsRef<Path>,
    ) -> Result<()> {
        let vp = values_path.as_ref();
        let mut w = csv::Writer::from_path(vp)
            .map_err(|e| Error::Csv { path: vp.display().to_string(), source: e })?;
        w.write_record(["value"])
            .map_err(|e| Error::Csv { path: vp.display().to_string(), source: e })?;
        for v in &self.values {
            w.write_record([format_float(*v)])
                .map_err(|e| Error::Csv { path: vp.display().to_string(), source: e })?;
        }
        w.flush().map_err(|e| Error::io(vp.display().to_string(), e))?;

        let gp = groups_path.as_ref();
        let mut w = csv::Writer::from_path(gp)
            .map_err(|e| Error::Csv { path: gp.display().to_string(), source: e })?;
        w.write_record(["offset", "size"])
            .map_err(|e| Error::Csv { path: gp.display().to_string(), source: e })?;
        for (off, size) in self.group_offsets.iter().zip(&self.group_sizes) {
            w.write_record([off.to_string(), size.to_string()])
                .map_err(|e| Error::Csv { path: gp.display().to_string(), source: e })?;
        }
        w.flush().map_err(|e| Error::io(gp.display().to_string(), e))
    }

    /// Reads a sample previously written by [`SpeedSample::write_csv_pair`].
    pub fn read_csv_pair(
        values_path: impl AsRef<Path>,
        groups_path: impl AsRef<Path>,
    ) -> Result<Self> {
        let vp = values_path.as_ref();
        let mut rdr = csv::Reader::from_path(vp)
            .map_err(|e| Error::Csv { path: vp.display().to_string(), source: e })?;
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv { path: vp.display().to_string(), source: e })?;
            let raw = rec.get(0).unwrap_or("").trim();
            let v: f64 = raw.parse().map_err(|_| Error::InvalidCells {
                cells: vec![CellError { row: i + 1, column: "value".into(), value: raw.into() }],
            })?;
            values.push(v);
        }

        let gp = groups_path.as_ref();
        let mut rdr = csv::Reader::from_path(gp)
            .map_err(|e| Error::Csv { path: gp.display().to_string(), source: e })?;
        let mut offsets = Vec::new();
        let mut sizes = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Csv { path: gp.display().to_string(), source: e })?;
            let parse = |col: usize, name: &str| -> Result<usize> {
                let raw = rec.get(col).unwrap_or("").trim();
                raw.parse().map_err(|_| Error::InvalidCells {
                    cells: vec![CellError { row: i + 1, column: name.into(), value: raw.into() }],
                })
            };
            offsets.push(parse(0, "offset")?);
            sizes.push(parse(1, "size")?);
        }
        SpeedSample::new(values, offsets, sizes)
    }
}

/// Formats a float with enough digits to round-trip exactly — the form
/// used by every CSV writer in this crate, so files parse back to
/// bit-identical values.
pub fn format_float(v: f64) -> String {
    let short = format!("{v}");
    if short.parse::<f64>() == Ok(v) {
        short
    } else {
        format!("{v:?}")
    }
}

fn next_down(v: f64) -> f64 {
    // f64::next_down in std; kept as a named helper for symmetry with
    // enforce_distinct's next_up usage.
    v.next_down()
}

/// Bumps later duplicates up by one ulp until all values are strictly
/// distinct. Returns the number of bumps applied.
pub(crate) fn enforce_distinct(values: &mut [f64]) -> usize {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a].partial_cmp(&values[b]).unwrap().then(a.cmp(&b))
    });
    let mut bumps = 0;
    for w in 1..order.len() {
        let prev = values[order[w - 1]];
        let cur = &mut values[order[w]];
        if *cur <= prev {
            *cur = prev.next_up();
            bumps += 1;
        }
    }
    bumps
}
