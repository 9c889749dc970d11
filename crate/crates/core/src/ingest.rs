//! Check-in log parsing, catalog construction, trajectory segmentation and
//! the per-user chronological train/test split.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
/// Half-hour slots per day.
pub const TIME_SLOTS: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetFormat {
    Foursquare,
    Gowalla,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "foursquare" | "nyc" | "tky" => Ok(DatasetFormat::Foursquare),
            "gowalla" => Ok(DatasetFormat::Gowalla),
            other => Err(Error::Config(format!(
                "unknown dataset format `{other}` (expected foursquare or gowalla)"
            ))),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetFormat::Foursquare => f.write_str("foursquare"),
            DatasetFormat::Gowalla => f.write_str("gowalla"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckIn {
    pub user_id: usize,
    pub poi_id: usize,
    /// UTC seconds.
    pub timestamp: i64,
    /// Offset of the venue's local time from UTC, in minutes.
    pub tz_offset_min: i32,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
}

impl CheckIn {
    pub fn local_seconds(&self) -> i64 {
        self.timestamp + i64::from(self.tz_offset_min) * 60
    }

    /// Half-hour slot of the local time of day, in `0..48`.
    pub fn time_slot(&self) -> usize {
        let minute_of_day = self.local_seconds().rem_euclid(SECONDS_PER_DAY) / 60;
        (minute_of_day / 30) as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub user_id: usize,
    pub checkins: Vec<CheckIn>,
    pub window_start: i64,
}

impl Trajectory {
    /// Every check-in except the prediction target.
    pub fn inputs(&self) -> &[CheckIn] {
        &self.checkins[..self.checkins.len().saturating_sub(1)]
    }

    pub fn target(&self) -> &CheckIn {
        self.checkins.last().expect("trajectory is nonempty")
    }

    /// The check-in preceding the target; anchors the temporal and spatial labels.
    pub fn last_input(&self) -> &CheckIn {
        let n = self.checkins.len();
        assert!(n >= 2, "trajectory {} has no input check-in", self.id);
        &self.checkins[n - 2]
    }

    pub fn input_pois(&self) -> Vec<usize> {
        self.inputs().iter().map(|c| c.poi_id).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub external_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub external_id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub users: Vec<UserRecord>,
    pub pois: Vec<PoiRecord>,
    pub time_slots: usize,
}

impl Catalog {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_pois(&self) -> usize {
        self.pois.len()
    }

    /// True when at least one POI carries a category label.
    pub fn has_categories(&self) -> bool {
        self.pois.iter().any(|p| !p.category.is_empty())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let users_path = dir.join("users.tsv");
        let mut w = BufWriter::new(File::create(&users_path).map_err(|e| Error::io(&users_path, e))?);
        for (i, u) in self.users.iter().enumerate() {
            writeln!(w, "{i}\t{}", u.external_id).map_err(|e| Error::io(&users_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&users_path, e))?;

        let pois_path = dir.join("pois.tsv");
        let mut w = BufWriter::new(File::create(&pois_path).map_err(|e| Error::io(&pois_path, e))?);
        for (i, p) in self.pois.iter().enumerate() {
            writeln!(w, "{i}\t{}\t{}\t{}\t{}", p.external_id, p.lat, p.lon, p.category)
                .map_err(|e| Error::io(&pois_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&pois_path, e))
    }

    pub fn load(dir: &Path) -> Result<Catalog> {
        let users_path = dir.join("users.tsv");
        let mut users = Vec::new();
        for (lineno, line) in read_lines(&users_path)? {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::parse(&users_path, lineno, "expected 2 fields"));
            }
            check_dense_index(&users_path, lineno, fields[0], users.len())?;
            users.push(UserRecord {
                external_id: fields[1].to_string(),
            });
        }

        let pois_path = dir.join("pois.tsv");
        let mut pois = Vec::new();
        for (lineno, line) in read_lines(&pois_path)? {
            let fields: Vec<&str> = line.splitn(5, '\t').collect();
            if fields.len() != 5 {
                return Err(Error::parse(&pois_path, lineno, "expected 5 fields"));
            }
            check_dense_index(&pois_path, lineno, fields[0], pois.len())?;
            pois.push(PoiRecord {
                external_id: fields[1].to_string(),
                lat: parse_f64(&pois_path, lineno, fields[2], "latitude")?,
                lon: parse_f64(&pois_path, lineno, fields[3], "longitude")?,
                category: fields[4].to_string(),
            });
        }
        Ok(Catalog {
            users,
            pois,
            time_slots: TIME_SLOTS,
        })
    }
}

fn check_dense_index(path: &Path, lineno: usize, field: &str, expected: usize) -> Result<()> {
    match field.parse::<usize>() {
        Ok(i) if i == expected => Ok(()),
        _ => Err(Error::parse(
            path,
            lineno,
            format!("expected index {expected}, found `{field}`"),
        )),
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn parse_f64(path: &Path, lineno: usize, s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, lineno, format!("invalid {what} `{s}`")))
}

/// Options controlling how a raw log is turned into check-ins.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub format: DatasetFormat,
    /// Local-time offset used when the format carries none (Gowalla).
    pub default_tz_offset_min: i32,
    /// Drop POIs with fewer check-ins than this (0 disables).
    pub min_poi_checkins: usize,
    /// Drop users with fewer check-ins than this, counted after POI filtering (0 disables).
    pub min_user_checkins: usize,
}

impl IngestOptions {
    pub fn new(format: DatasetFormat) -> Self {
        IngestOptions {
            format,
            default_tz_offset_min: 0,
            min_poi_checkins: 0,
            min_user_checkins: 0,
        }
    }
}

#[derive(Clone, Debug)]
struct RawRecord {
    user: String,
    venue: String,
    timestamp: i64,
    tz_offset_min: i32,
    lat: f64,
    lon: f64,
    category: String,
}

fn parse_foursquare_line(path: &Path, lineno: usize, line: &str) -> Result<RawRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return Err(Error::parse(
            path,
            lineno,
            format!("expected 8 tab-separated fields, found {}", fields.len()),
        ));
    }
    let tz_offset_min = fields[6]
        .trim()
        .parse::<i32>()
        .map_err(|_| Error::parse(path, lineno, format!("invalid timezone offset `{}`", fields[6])))?;
    let timestamp = DateTime::parse_from_str(fields[7].trim(), "%a %b %d %H:%M:%S %z %Y")
        .map_err(|e| Error::parse(path, lineno, format!("invalid time `{}`: {e}", fields[7])))?
        .timestamp();
    Ok(RawRecord {
        user: fields[0].to_string(),
        venue: fields[1].to_string(),
        category: fields[3].to_string(),
        lat: parse_f64(path, lineno, fields[4], "latitude")?,
        lon: parse_f64(path, lineno, fields[5], "longitude")?,
        tz_offset_min,
        timestamp,
    })
}

fn parse_gowalla_time(s: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|dt| dt.and_utc().timestamp())
}

fn parse_gowalla_line(path: &Path, lineno: usize, line: &str, tz: i32) -> Result<RawRecord> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(Error::parse(
            path,
            lineno,
            format!("expected 5 tab-separated fields, found {}", fields.len()),
        ));
    }
    let timestamp = parse_gowalla_time(fields[1].trim())
        .ok_or_else(|| Error::parse(path, lineno, format!("invalid time `{}`", fields[1])))?;
    Ok(RawRecord {
        user: fields[0].to_string(),
        venue: fields[4].trim().to_string(),
        category: String::new(),
        lat: parse_f64(path, lineno, fields[2], "latitude")?,
        lon: parse_f64(path, lineno, fields[3], "longitude")?,
        tz_offset_min: tz,
        timestamp,
    })
}

/// Parses a raw check-in log. Catalog indices follow first appearance in the
/// file; check-ins come back sorted by user, then timestamp.
pub fn parse_checkins(path: &Path, options: &IngestOptions) -> Result<(Vec<CheckIn>, Catalog)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_checkins_from_reader(BufReader::new(file), path, options)
}

pub fn parse_checkins_from_reader<R: BufRead>(
    reader: R,
    path: &Path,
    options: &IngestOptions,
) -> Result<(Vec<CheckIn>, Catalog)> {
    let mut raw = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let rec = match options.format {
            DatasetFormat::Foursquare => parse_foursquare_line(path, lineno, line)?,
            DatasetFormat::Gowalla => {
                parse_gowalla_line(path, lineno, line, options.default_tz_offset_min)?
            }
        };
        if !(-90.0..=90.0).contains(&rec.lat) || !(-180.0..=180.0).contains(&rec.lon) {
            return Err(Error::parse(
                path,
                lineno,
                format!("coordinates out of range ({}, {})", rec.lat, rec.lon),
            ));
        }
        raw.push(rec);
    }
    let raw = filter_min_counts(raw, options.min_poi_checkins, options.min_user_checkins);
    Ok(build_catalog(raw))
}

fn filter_min_counts(raw: Vec<RawRecord>, min_poi: usize, min_user: usize) -> Vec<RawRecord> {
    let mut raw = raw;
    if min_poi > 0 {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &raw {
            *counts.entry(r.venue.as_str()).or_default() += 1;
        }
        let keep: Vec<bool> = raw.iter().map(|r| counts[r.venue.as_str()] >= min_poi).collect();
        raw = raw
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect();
    }
    if min_user > 0 {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for r in &raw {
            *counts.entry(r.user.as_str()).or_default() += 1;
        }
        let keep: Vec<bool> = raw.iter().map(|r| counts[r.user.as_str()] >= min_user).collect();
        raw = raw
            .into_iter()
            .zip(keep)
            .filter_map(|(r, k)| k.then_some(r))
            .collect();
    }
    raw
}

fn build_catalog(raw: Vec<RawRecord>) -> (Vec<CheckIn>, Catalog) {
    let mut user_index: HashMap<String, usize> = HashMap::new();
    let mut poi_index: HashMap<String, usize> = HashMap::new();
    let mut users = Vec::new();
    let mut pois = Vec::new();
    let mut checkins = Vec::with_capacity(raw.len());

    for r in raw {
        let user_id = *user_index.entry(r.user.clone()).or_insert_with(|| {
            users.push(UserRecord {
                external_id: r.user.clone(),
            });
            users.len() - 1
        });
        let poi_id = *poi_index.entry(r.venue.clone()).or_insert_with(|| {
            pois.push(PoiRecord {
                external_id: r.venue.clone(),
                lat: r.lat,
                lon: r.lon,
                category: r.category.clone(),
            });
            pois.len() - 1
        });
        checkins.push(CheckIn {
            user_id,
            poi_id,
            timestamp: r.timestamp,
            tz_offset_min: r.tz_offset_min,
            lat: r.lat,
            lon: r.lon,
            category: r.category,
        });
    }
    // Stable: equal timestamps keep file order.
    checkins.sort_by_key(|c| (c.user_id, c.timestamp));
    (
        checkins,
        Catalog {
            users,
            pois,
            time_slots: TIME_SLOTS,
        },
    )
}

/// Splits each user's check-ins into consecutive 24-hour windows, each anchored
/// at the first check-in after the previous window closed. No length filter.
pub fn segment_windows(checkins: &[CheckIn]) -> Vec<Trajectory> {
    let mut per_user: BTreeMap<usize, Vec<&CheckIn>> = BTreeMap::new();
    for c in checkins {
        per_user.entry(c.user_id).or_default().push(c);
    }
    let mut out = Vec::new();
    for (user_id, mut list) in per_user {
        list.sort_by_key(|c| c.timestamp);
        let mut current: Option<Trajectory> = None;
        for c in list {
            match current.as_mut() {
                Some(t) if c.timestamp < t.window_start + SECONDS_PER_DAY => {
                    t.checkins.push(c.clone())
                }
                _ => {
                    if let Some(done) = current.take() {
                        out.push(done);
                    }
                    current = Some(Trajectory {
                        id: 0,
                        user_id,
                        checkins: vec![c.clone()],
                        window_start: c.timestamp,
                    });
                }
            }
        }
        if let Some(done) = current {
            out.push(done);
        }
    }
    out
}

/// Windowed trajectories with at least one input and one target, ids
/// assigned in (user, window_start) order.
pub fn segment_trajectories(checkins: &[CheckIn]) -> Vec<Trajectory> {
    let mut out: Vec<Trajectory> = segment_windows(checkins)
        .into_iter()
        .filter(|t| t.checkins.len() >= 2)
        .collect();
    for (i, t) in out.iter_mut().enumerate() {
        t.id = i;
    }
    out
}

/// Number of trajectories the train side receives for a user with `n` of them.
pub fn train_count(n: usize, ratio: f64) -> usize {
    // Guards against products such as 0.7 * 10 = 7.000000000000001.
    let raw = (ratio * n as f64 - 1e-9).ceil();
    (raw.max(0.0) as usize).min(n)
}

/// Per-user chronological split: the earliest `ceil(ratio * |Q_u|)` windows train.
pub fn chronological_split(
    trajectories: &[Trajectory],
    ratio: f64,
) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1]")));
    }
    let mut per_user: BTreeMap<usize, Vec<&Trajectory>> = BTreeMap::new();
    for t in trajectories {
        per_user.entry(t.user_id).or_default().push(t);
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, mut list) in per_user {
        list.sort_by_key(|t| (t.window_start, t.id));
        let k = train_count(list.len(), ratio);
        for (i, t) in list.into_iter().enumerate() {
            if i < k {
                train.push(t.clone());
            } else {
                test.push(t.clone());
            }
        }
    }
    Ok((train, test))
}
