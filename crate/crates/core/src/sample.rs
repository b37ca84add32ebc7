//! Game-level panels of observed actions and their support.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One game: the actions of its `N` agents plus optional game-level covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameRecord {
    pub id: String,
    pub actions: Vec<f64>,
    /// Game-level covariates; empty when none were observed.
    #[serde(default)]
    pub covariates: Vec<f64>,
    /// Explicit group tag for heterogeneous-`N` designs.
    #[serde(default)]
    pub group: Option<u32>,
}

impl GameRecord {
    pub fn new(id: impl Into<String>, actions: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            actions,
            covariates: Vec::new(),
            group: None,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_group(mut self, group: u32) -> Self {
        self.group = Some(group);
        self
    }

    pub fn n_agents(&self) -> usize {
        self.actions.len()
    }

    /// The group this game is bootstrapped within: its tag, or its agent count.
    pub fn group_key(&self) -> u32 {
        self.group.unwrap_or(self.actions.len() as u32)
    }

    /// First covariate, the one used by the nonparametric covariate test.
    pub fn covariate(&self) -> Option<f64> {
        self.covariates.first().copied()
    }

    fn validate(&self) -> Result<()> {
        if self.actions.len() < 2 {
            return Err(Error::InvalidGame(format!(
                "game {:?} has {} action(s); at least 2 agents are required",
                self.id,
                self.actions.len()
            )));
        }
        if let Some(bad) = self.actions.iter().find(|a| !a.is_finite()) {
            return Err(Error::InvalidGame(format!(
                "game {:?} has a non-finite action {bad}",
                self.id
            )));
        }
        if let Some(bad) = self.covariates.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidGame(format!(
                "game {:?} has a non-finite covariate {bad}",
                self.id
            )));
        }
        Ok(())
    }
}

/// A panel of games; the game is the unit of bootstrap resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSample {
    games: Vec<GameRecord>,
}

impl ActionSample {
    /// Validates every game and the group invariants.
    pub fn new(games: Vec<GameRecord>) -> Result<Self> {
        if games.len() < 2 {
            return Err(Error::InvalidSample(format!(
                "{} game(s); at least 2 are required",
                games.len()
            )));
        }
        let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
        for game in &games {
            game.validate()?;
            let n = *sizes.entry(game.group_key()).or_insert(game.n_agents());
            if n != game.n_agents() {
                return Err(Error::InvalidSample(format!(
                    "group {} mixes games with {} and {} agents",
                    game.group_key(),
                    n,
                    game.n_agents()
                )));
            }
        }
        Ok(Self { games })
    }

    pub fn games(&self) -> &[GameRecord] {
        &self.games
    }

    pub fn into_games(self) -> Vec<GameRecord> {
        self.games
    }

    /// Number of games `L`.
    pub fn num_games(&self) -> usize {
        self.games.len()
    }

    /// Total number of observed actions `S`.
    pub fn num_obs(&self) -> usize {
        self.games.iter().map(GameRecord::n_agents).sum()
    }

    /// Agents per game when every game has the same count.
    pub fn n_agents(&self) -> Option<usize> {
        let n = self.games[0].n_agents();
        self.games.iter().all(|g| g.n_agents() == n).then_some(n)
    }

    pub fn actions(&self) -> impl Iterator<Item = f64> + '_ {
        self.games.iter().flat_map(|g| g.actions.iter().copied())
    }

    pub fn has_covariates(&self) -> bool {
        self.games.iter().all(|g| !g.covariates.is_empty())
    }

    /// Splits the panel by group key, in ascending key order.
    pub fn split_groups(&self) -> Vec<(u32, Vec<GameRecord>)> {
        let mut groups: BTreeMap<u32, Vec<GameRecord>> = BTreeMap::new();
        for game in &self.games {
            groups.entry(game.group_key()).or_default().push(game.clone());
        }
        groups.into_iter().collect()
    }

    /// Applies `f` to every action, keeping games and covariates.
    pub fn map_actions(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let games = self
            .games
            .iter()
            .map(|g| GameRecord {
                actions: g.actions.iter().map(|&a| f(a)).collect(),
                ..g.clone()
            })
            .collect();
        Self::new(games)
    }
}

/// The action support `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub lo: f64,
    pub hi: f64,
}

impl Support {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidSupport { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Length of the support.
    pub fn a(&self) -> f64 {
        self.hi - self.lo
    }

    /// Cell edge `lo + a * j / q`. The edge at `j == q` is `hi` exactly.
    pub fn edge(&self, q: u32, j: u32) -> f64 {
        if j >= q {
            self.hi
        } else {
            self.lo + self.a() * f64::from(j) / f64::from(q)
        }
    }

    pub fn midpoint(&self) -> f64 {
        self.edge(2, 1)
    }
}

/// Empirical support of the actions, or the override when one is given.
pub fn infer_support(sample: &ActionSample, bounds: Option<(f64, f64)>) -> Result<Support> {
    if let Some((lo, hi)) = bounds {
        return Support::new(lo, hi);
    }
    support_of(sample.actions())
}

pub(crate) fn support_of(actions: impl Iterator<Item = f64>) -> Result<Support> {
    let (lo, hi) = actions.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| {
        (lo.min(a), hi.max(a))
    });
    if !lo.is_finite() {
        return Err(Error::InvalidSample("no actions".into()));
    }
    if lo == hi {
        return Err(Error::DegenerateSupport(lo));
    }
    Support::new(lo, hi)
}
