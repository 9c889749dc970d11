//! Prepared corpus: catalog, labelled train/test trajectories and POI
//! regions, with its on-disk layout.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::ingest::{chronological_split, segment_trajectories, Catalog, CheckIn, Trajectory};
use crate::scenario::{
    classify_pois, classify_users, label_trajectory, CityCenterSet, CompositeScenario,
    ScenarioLabel, Spatial, UserType,
};

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub catalog: Catalog,
    pub user_types: Vec<UserType>,
    pub poi_regions: Vec<Spatial>,
    pub train: Vec<Trajectory>,
    pub train_labels: Vec<ScenarioLabel>,
    pub test: Vec<Trajectory>,
    pub test_labels: Vec<ScenarioLabel>,
}

impl PreparedData {
    /// Segments, splits and labels a parsed corpus.
    pub fn from_checkins(
        checkins: &[CheckIn],
        catalog: Catalog,
        centers: &CityCenterSet,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let scenario_cfg = cfg.scenario();
        let user_types = classify_users(checkins, &catalog, &scenario_cfg);
        let poi_regions = classify_pois(&catalog, centers, cfg.downtown_radius_km);
        let trajectories = segment_trajectories(checkins);
        let (train, test) = chronological_split(&trajectories, cfg.split_ratio)?;
        let label = |t: &Trajectory| label_trajectory(t, &user_types, centers, &scenario_cfg);
        let train_labels = train.iter().map(label).collect();
        let test_labels = test.iter().map(label).collect();
        Ok(PreparedData {
            catalog,
            user_types,
            poi_regions,
            train,
            train_labels,
            test,
            test_labels,
        })
    }

    pub fn num_users(&self) -> usize {
        self.catalog.num_users()
    }

    pub fn num_pois(&self) -> usize {
        self.catalog.num_pois()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.catalog.save(dir)?;

        let mut s = String::new();
        for (u, t) in self.user_types.iter().enumerate() {
            let name = match t {
                UserType::Local => "local",
                UserType::Tourist => "tourist",
            };
            let _ = writeln!(s, "{u}\t{name}");
        }
        write(dir, "user_types.tsv", &s)?;

        let mut s = String::new();
        for (p, r) in self.poi_regions.iter().enumerate() {
            let name = match r {
                Spatial::Downtown => "downtown",
                Spatial::Suburban => "suburban",
            };
            let _ = writeln!(s, "{p}\t{name}");
        }
        write(dir, "poi_regions.tsv", &s)?;

        let mut trajs = String::new();
        let mut scen = String::new();
        let parts = [
            ("train", &self.train, &self.train_labels),
            ("test", &self.test, &self.test_labels),
        ];
        for (split, ts, ls) in parts {
            for (t, l) in ts.iter().zip(ls) {
                let checkins = t
                    .checkins
                    .iter()
                    .map(|c| format!("{},{},{},{},{}", c.poi_id, c.timestamp, c.tz_offset_min, c.lat, c.lon))
                    .collect::<Vec<_>>()
                    .join(";");
                let _ = writeln!(
                    trajs,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    t.id,
                    t.user_id,
                    split,
                    l.composite().id(),
                    t.window_start,
                    checkins
                );
                let _ = writeln!(scen, "{}\t{}", t.id, l.composite().id());
            }
        }
        write(dir, "trajectories.tsv", &trajs)?;
        write(dir, "scenarios.tsv", &scen)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let catalog = Catalog::load(dir)?;

        let user_types = read_labels(dir, "user_types.tsv", |s| match s {
            "local" => Some(UserType::Local),
            "tourist" => Some(UserType::Tourist),
            _ => None,
        })?;
        let poi_regions = read_labels(dir, "poi_regions.tsv", |s| match s {
            "downtown" => Some(Spatial::Downtown),
            "suburban" => Some(Spatial::Suburban),
            _ => None,
        })?;
        if user_types.len() != catalog.num_users() || poi_regions.len() != catalog.num_pois() {
            return Err(Error::Incompatible(
                "label files do not match the catalog size".into(),
            ));
        }

        let path = dir.join("trajectories.tsv");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut data = PreparedData {
            catalog,
            user_types,
            poi_regions,
            train: Vec::new(),
            train_labels: Vec::new(),
            test: Vec::new(),
            test_labels: Vec::new(),
        };
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let bad = |m: &str| Error::parse(&path, lineno, m.to_string());
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            let num = |s: &str| s.parse::<i64>().map_err(|_| bad("invalid integer"));
            let id = num(f[0])? as usize;
            let user_id = num(f[1])? as usize;
            let label = CompositeScenario::new(num(f[3])? as usize)?.label();
            let window_start = num(f[4])?;
            let mut checkins = Vec::new();
            for item in f[5].split(';') {
                let c: Vec<&str> = item.split(',').collect();
                if c.len() != 5 {
                    return Err(bad("malformed check-in"));
                }
                let poi_id = num(c[0])? as usize;
                let rec = data
                    .catalog
                    .pois
                    .get(poi_id)
                    .ok_or_else(|| bad("POI index outside catalog"))?;
                checkins.push(CheckIn {
                    user_id,
                    poi_id,
                    timestamp: num(c[1])?,
                    tz_offset_min: num(c[2])? as i32,
                    lat: c[3].parse().map_err(|_| bad("invalid latitude"))?,
                    lon: c[4].parse().map_err(|_| bad("invalid longitude"))?,
                    category: rec.category.clone(),
                });
            }
            if user_id >= data.catalog.num_users() {
                return Err(bad("user index outside catalog"));
            }
            let t = Trajectory {
                id,
                user_id,
                checkins,
                window_start,
            };
            match f[2] {
                "train" => {
                    data.train.push(t);
                    data.train_labels.push(label);
                }
                "test" => {
                    data.test.push(t);
                    data.test_labels.push(label);
                }
                _ => return Err(bad("split must be train or test")),
            }
        }
        Ok(data)
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

fn read_labels<T>(dir: &Path, name: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split('\t')
                .nth(1)
                .and_then(&parse)
                .ok_or_else(|| Error::parse(&path, i + 1, "invalid label"))
        })
        .collect()
}
