//! Scenario labelling: user type (local/tourist), temporal context
//! (workday/weekend) and spatial region (downtown/suburban), combined into
//! one of eight composite scenarios.

use std::fmt;
use std::path::Path;

use chrono::{DateTime, Datelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Catalog, CheckIn, Trajectory};

pub const NUM_SCENARIOS: usize = 8;
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UserType {
    Local = 0,
    Tourist = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Temporal {
    Workday = 0,
    Weekend = 1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Spatial {
    Downtown = 0,
    Suburban = 1,
}

impl UserType {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl Temporal {
    pub fn index(self) -> usize {
        self as usize
    }
}

impl Spatial {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScenarioLabel {
    pub user_type: UserType,
    pub temporal: Temporal,
    pub spatial: Spatial,
}

impl ScenarioLabel {
    pub fn composite(&self) -> CompositeScenario {
        CompositeScenario(
            (4 * self.user_type.index() + 2 * self.temporal.index() + self.spatial.index()) as u8,
        )
    }
}

/// Composite scenario index `4·user_type + 2·temporal + spatial`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CompositeScenario(u8);

impl CompositeScenario {
    pub fn new(id: usize) -> Result<Self> {
        if id < NUM_SCENARIOS {
            Ok(CompositeScenario(id as u8))
        } else {
            Err(Error::Config(format!("composite scenario id {id} outside 0..8")))
        }
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = CompositeScenario> {
        (0..NUM_SCENARIOS as u8).map(CompositeScenario)
    }

    pub fn label(self) -> ScenarioLabel {
        let id = self.0;
        ScenarioLabel {
            user_type: if id & 4 == 0 { UserType::Local } else { UserType::Tourist },
            temporal: if id & 2 == 0 { Temporal::Workday } else { Temporal::Weekend },
            spatial: if id & 1 == 0 { Spatial::Downtown } else { Spatial::Suburban },
        }
    }
}

impl fmt::Display for CompositeScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = self.label();
        let ut = match l.user_type {
            UserType::Local => "local",
            UserType::Tourist => "tourist",
        };
        let tm = match l.temporal {
            Temporal::Workday => "workday",
            Temporal::Weekend => "weekend",
        };
        let sp = match l.spatial {
            Spatial::Downtown => "downtown",
            Spatial::Suburban => "suburban",
        };
        write!(f, "{ut}&{tm}&{sp}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityCenter {
    pub name: String,
    pub lat: f64,
    pub lon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityCenterSet {
    centers: Vec<CityCenter>,
}

impl CityCenterSet {
    pub fn new(centers: Vec<CityCenter>) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("city center set is empty".into()));
        }
        for c in &centers {
            if !(-90.0..=90.0).contains(&c.lat) || !(-180.0..=180.0).contains(&c.lon) {
                return Err(Error::Config(format!(
                    "city center `{}` has invalid coordinates ({}, {})",
                    c.name, c.lat, c.lon
                )));
            }
        }
        Ok(CityCenterSet { centers })
    }

    /// New York City and Tokyo, the cities covered by the Foursquare dumps.
    pub fn foursquare_default() -> Self {
        CityCenterSet {
            centers: vec![
                CityCenter {
                    name: "New York".into(),
                    lat: 40.7128,
                    lon: -74.0060,
                },
                CityCenter {
                    name: "Tokyo".into(),
                    lat: 35.6895,
                    lon: 139.6917,
                },
            ],
        }
    }

    /// Reads `name<TAB>lat<TAB>lon` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut centers = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(path, i + 1, "expected name<TAB>lat<TAB>lon"));
            }
            let num = |s: &str, what: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, i + 1, format!("invalid {what} `{s}`")))
            };
            centers.push(CityCenter {
                name: fields[0].to_string(),
                lat: num(fields[1], "latitude")?,
                lon: num(fields[2], "longitude")?,
            });
        }
        CityCenterSet::new(centers)
    }

    pub fn centers(&self) -> &[CityCenter] {
        &self.centers
    }

    pub fn nearest_distance_km(&self, lat: f64, lon: f64) -> f64 {
        self.centers
            .iter()
            .map(|c| haversine_km((lat, lon), (c.lat, c.lon)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Great-circle distance on a sphere of radius 6371 km.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub tourist_threshold: f64,
    pub downtown_radius_km: f64,
    /// Lower-case substrings identifying accommodation categories.
    pub accommodation_categories: Vec<String>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            tourist_threshold: 0.05,
            downtown_radius_km: 10.0,
            accommodation_categories: ["hotel", "hostel", "motel", "resort", "bed & breakfast"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

pub fn is_accommodation(category: &str, patterns: &[String]) -> bool {
    let lower = category.to_lowercase();
    patterns
        .iter()
        .any(|p| !p.is_empty() && lower.contains(&p.to_lowercase()))
}

/// Tourist iff the share of accommodation check-ins strictly exceeds `threshold`.
pub fn classify_user(history: &[CheckIn], threshold: f64, accommodation: &[String]) -> UserType {
    if history.is_empty() {
        return UserType::Local;
    }
    let hits = history
        .iter()
        .filter(|c| is_accommodation(&c.category, accommodation))
        .count();
    if hits as f64 / history.len() as f64 > threshold {
        UserType::Tourist
    } else {
        UserType::Local
    }
}

pub fn weekday_of(local_seconds: i64) -> Weekday {
    DateTime::from_timestamp(local_seconds, 0)
        .expect("timestamp within chrono range")
        .weekday()
}

/// Weekend iff the last input check-in falls on Saturday or Sunday, local time.
pub fn classify_temporal(trajectory: &Trajectory) -> Temporal {
    match weekday_of(trajectory.last_input().local_seconds()) {
        Weekday::Sat | Weekday::Sun => Temporal::Weekend,
        _ => Temporal::Workday,
    }
}

/// Downtown iff within `radius_km` (inclusive) of the nearest city center.
pub fn classify_location(lat: f64, lon: f64, centers: &CityCenterSet, radius_km: f64) -> Spatial {
    if centers.nearest_distance_km(lat, lon) <= radius_km {
        Spatial::Downtown
    } else {
        Spatial::Suburban
    }
}

pub fn classify_spatial(trajectory: &Trajectory, centers: &CityCenterSet, radius_km: f64) -> Spatial {
    let c = trajectory.last_input();
    classify_location(c.lat, c.lon, centers, radius_km)
}

/// Labels every user of the catalog from their full history.
pub fn classify_users(checkins: &[CheckIn], catalog: &Catalog, cfg: &ScenarioConfig) -> Vec<UserType> {
    let m = catalog.num_users();
    if !catalog.has_categories() || cfg.accommodation_categories.is_empty() {
        log::warn!("no category data available; every user is labelled local");
        return vec![UserType::Local; m];
    }
    let mut totals = vec![0usize; m];
    let mut hits = vec![0usize; m];
    for c in checkins {
        totals[c.user_id] += 1;
        if is_accommodation(&c.category, &cfg.accommodation_categories) {
            hits[c.user_id] += 1;
        }
    }
    (0..m)
        .map(|u| {
            if totals[u] > 0 && hits[u] as f64 / totals[u] as f64 > cfg.tourist_threshold {
                UserType::Tourist
            } else {
                UserType::Local
            }
        })
        .collect()
}

pub fn label_trajectory(
    trajectory: &Trajectory,
    user_types: &[UserType],
    centers: &CityCenterSet,
    cfg: &ScenarioConfig,
) -> ScenarioLabel {
    ScenarioLabel {
        user_type: user_types[trajectory.user_id],
        temporal: classify_temporal(trajectory),
        spatial: classify_spatial(trajectory, centers, cfg.downtown_radius_km),
    }
}

pub fn classify_pois(catalog: &Catalog, centers: &CityCenterSet, radius_km: f64) -> Vec<Spatial> {
    catalog
        .pois
        .iter()
        .map(|p| classify_location(p.lat, p.lon, centers, radius_km))
        .collect()
}

/// Evaluation slices: the three single-dimension pairs, the overall set and
/// the eight composites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slice {
    Overall,
    UserType(UserType),
    Spatial(Spatial),
    Temporal(Temporal),
    Composite(CompositeScenario),
}

impl Slice {
    pub fn all() -> Vec<Slice> {
        let mut out = vec![
            Slice::Overall,
            Slice::UserType(UserType::Local),
            Slice::UserType(UserType::Tourist),
            Slice::Spatial(Spatial::Downtown),
            Slice::Spatial(Spatial::Suburban),
            Slice::Temporal(Temporal::Workday),
            Slice::Temporal(Temporal::Weekend),
        ];
        out.extend(CompositeScenario::all().map(Slice::Composite));
        out
    }

    pub fn contains(&self, label: &ScenarioLabel) -> bool {
        match *self {
            Slice::Overall => true,
            Slice::UserType(u) => label.user_type == u,
            Slice::Spatial(s) => label.spatial == s,
            Slice::Temporal(t) => label.temporal == t,
            Slice::Composite(c) => label.composite() == c,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Slice::Overall => "overall".into(),
            Slice::UserType(UserType::Local) => "local".into(),
            Slice::UserType(UserType::Tourist) => "tourist".into(),
            Slice::Spatial(Spatial::Downtown) => "downtown".into(),
            Slice::Spatial(Spatial::Suburban) => "suburban".into(),
            Slice::Temporal(Temporal::Workday) => "workday".into(),
            Slice::Temporal(Temporal::Weekend) => "weekend".into(),
            Slice::Composite(c) => format!("composite_{}", c.id()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ci(ts: i64, tz: i32, lat: f64, lon: f64, category: &str) -> CheckIn {
        CheckIn {
            user_id: 0,
            poi_id: 0,
            timestamp: ts,
            tz_offset_min: tz,
            lat,
            lon,
            category: category.into(),
        }
    }

    fn traj(last_input: CheckIn) -> Trajectory {
        let target = last_input.clone();
        Trajectory {
            id: 0,
            user_id: 0,
            window_start: last_input.timestamp,
            checkins: vec![last_input, target],
        }
    }

    fn accom() -> Vec<String> {
        ScenarioConfig::default().accommodation_categories
    }

    #[test]
    fn composite_bijection() {
        for k in CompositeScenario::all() {
            assert_eq!(k.label().composite(), k);
        }
        assert!(CompositeScenario::new(8).is_err());
        let l = ScenarioLabel {
            user_type: UserType::Tourist,
            temporal: Temporal::Workday,
            spatial: Spatial::Suburban,
        };
        assert_eq!(l.composite().id(), 5);
    }

    #[test]
    fn user_type_threshold() {
        let mut h: Vec<CheckIn> = (0..9).map(|i| ci(i, 0, 0.0, 0.0, "Bar")).collect();
        h.push(ci(10, 0, 0.0, 0.0, "Hotel"));
        assert_eq!(classify_user(&h, 0.05, &accom()), UserType::Tourist);

        let none: Vec<CheckIn> = (0..10).map(|i| ci(i, 0, 0.0, 0.0, "Bar")).collect();
        assert_eq!(classify_user(&none, 0.05, &accom()), UserType::Local);

        let mut exact: Vec<CheckIn> = (0..19).map(|i| ci(i, 0, 0.0, 0.0, "Bar")).collect();
        exact.push(ci(19, 0, 0.0, 0.0, "Hotel"));
        assert_eq!(classify_user(&exact, 0.05, &accom()), UserType::Local);
    }

    #[test]
    fn accommodation_match_is_case_insensitive_substring() {
        assert!(is_accommodation("Hotel Bar", &accom()));
        assert!(is_accommodation("BED & BREAKFAST", &accom()));
        assert!(!is_accommodation("Hospital", &accom()));
    }

    #[test]
    fn temporal_labels() {
        // 2012-04-07 is a Saturday.
        let sat_14 = 1_333_807_200;
        assert_eq!(classify_temporal(&traj(ci(sat_14, 0, 0.0, 0.0, ""))), Temporal::Weekend);
        // 2012-04-04 09:00 UTC, Wednesday.
        let wed_9 = 1_333_530_000;
        assert_eq!(classify_temporal(&traj(ci(wed_9, 0, 0.0, 0.0, ""))), Temporal::Workday);
        // Saturday 03:00 UTC shifted by -5h lands on Friday 22:00.
        let sat_3_utc = 1_333_767_600;
        assert_eq!(weekday_of(sat_3_utc), Weekday::Sat);
        assert_eq!(classify_temporal(&traj(ci(sat_3_utc, -300, 0.0, 0.0, ""))), Temporal::Workday);
    }

    #[test]
    fn temporal_uses_penultimate_checkin() {
        let wed = 1_333_530_000;
        let sat = 1_333_807_200;
        let t = Trajectory {
            id: 0,
            user_id: 0,
            window_start: wed,
            checkins: vec![ci(wed, 0, 0.0, 0.0, ""), ci(sat, 0, 0.0, 0.0, "")],
        };
        assert_eq!(classify_temporal(&t), Temporal::Workday);
    }

    #[test]
    fn haversine_reference_values() {
        assert_eq!(haversine_km((12.0, 34.0), (12.0, 34.0)), 0.0);
        let half = haversine_km((0.0, 0.0), (0.0, 180.0));
        assert!((half - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 1e-6);
        assert!((half - 20015.086796).abs() < 1e-3);
    }

    #[test]
    fn spatial_labels() {
        let centers = CityCenterSet::foursquare_default();
        let at_center = traj(ci(0, 0, 40.7128, -74.0060, ""));
        assert_eq!(classify_spatial(&at_center, &centers, 10.0), Spatial::Downtown);
        let midtown = traj(ci(0, 0, 40.7580, -73.9855, ""));
        assert_eq!(classify_spatial(&midtown, &centers, 10.0), Spatial::Downtown);
        let far = traj(ci(0, 0, 41.2, -74.0060, ""));
        assert_eq!(classify_spatial(&far, &centers, 10.0), Spatial::Suburban);
    }

    #[test]
    fn spatial_boundary_is_inclusive() {
        let centers = CityCenterSet::new(vec![CityCenter {
            name: "c".into(),
            lat: 0.0,
            lon: 0.0,
        }])
        .unwrap();
        // Point on the equator exactly 10 km east.
        let lon = (10.0 / EARTH_RADIUS_KM).to_degrees();
        let d = centers.nearest_distance_km(0.0, lon);
        assert_eq!(classify_location(0.0, lon, &centers, d), Spatial::Downtown);
        assert!((d - 10.0).abs() < 1e-9);
        assert_eq!(classify_location(0.0, lon, &centers, d - 1e-9), Spatial::Suburban);
    }

    #[test]
    fn empty_centers_rejected() {
        assert!(matches!(CityCenterSet::new(vec![]), Err(Error::Config(_))));
    }

    #[test]
    fn slices_partition_composites() {
        for k in CompositeScenario::all() {
            let l = k.label();
            let hits: Vec<_> = Slice::all()
                .into_iter()
                .filter(|s| matches!(s, Slice::Composite(_)) && s.contains(&l))
                .collect();
            assert_eq!(hits, vec![Slice::Composite(k)]);
            assert!(Slice::UserType(l.user_type).contains(&l));
        }
    }
}
