//! Panel observations of play: who chose which action in which game.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["participant_id", "game_id", "action", "opponent_action", "order"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub participant: String,
    pub game: String,
    /// 0-based action index of the participant (row player).
    pub action: usize,
    pub opponent_action: Option<usize>,
    /// Presentation position of the game for this participant.
    pub order: Option<usize>,
}

impl Observation {
    pub fn new(participant: impl Into<String>, game: impl Into<String>, action: usize) -> Self {
        Observation {
            participant: participant.into(),
            game: game.into(),
            action,
            opponent_action: None,
            order: None,
        }
    }

    pub fn with_opponent(mut self, opponent_action: Option<usize>) -> Self {
        self.opponent_action = opponent_action;
        self
    }

    pub fn with_order(mut self, order: Option<usize>) -> Self {
        self.order = order;
        self
    }
}

/// Validated panel dataset. Participants and games are listed in order of
/// first appearance; each (participant, game) pair occurs at most once.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayDataset {
    participants: Vec<String>,
    games: Vec<String>,
    observations: Vec<Observation>,
}

impl PlayDataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut participants = Vec::new();
        let mut participant_set = HashSet::new();
        let mut games = Vec::new();
        let mut game_set = HashSet::new();
        for obs in &observations {
            if !seen.insert((obs.participant.as_str(), obs.game.as_str())) {
                return Err(Error::InvalidDataset(format!(
                    "participant {} has two observations for game {}",
                    obs.participant, obs.game
                )));
            }
            if participant_set.insert(obs.participant.as_str()) {
                participants.push(obs.participant.clone());
            }
            if game_set.insert(obs.game.as_str()) {
                games.push(obs.game.clone());
            }
        }
        Ok(PlayDataset {
            participants,
            games,
            observations,
        })
    }

    pub fn participants(&self) -> &[String] {
        &self.participants
    }

    pub fn games(&self) -> &[String] {
        &self.games
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Games played by `participant`, in dataset order.
    pub fn games_of(&self, participant: &str) -> Vec<&str> {
        self.observations
            .iter()
            .filter(|o| o.participant == participant)
            .map(|o| o.game.as_str())
            .collect()
    }

    /// Checks every action against the action count of its game.
    pub fn check_actions(&self, n_actions: &HashMap<&str, usize>) -> Result<()> {
        for obs in &self.observations {
            let n = *n_actions
                .get(obs.game.as_str())
                .ok_or_else(|| Error::UnknownGame(obs.game.clone()))?;
            let bad = |a: usize| a >= n;
            if bad(obs.action) || obs.opponent_action.is_some_and(bad) {
                return Err(Error::InvalidDataset(format!(
                    "action out of range for game {} ({} actions), participant {}",
                    obs.game, n, obs.participant
                )));
            }
        }
        Ok(())
    }

    /// Observations of the given participants only.
    pub fn with_participants(&self, keep: &HashSet<&str>) -> PlayDataset {
        self.filtered(|o| keep.contains(o.participant.as_str()))
    }

    /// Observations of the given games only.
    pub fn with_games(&self, keep: &HashSet<&str>) -> PlayDataset {
        self.filtered(|o| keep.contains(o.game.as_str()))
    }

    fn filtered(&self, keep: impl Fn(&Observation) -> bool) -> PlayDataset {
        let observations: Vec<Observation> = self.observations.iter().filter(|o| keep(o)).cloned().collect();
        PlayDataset::new(observations).expect("subset of a valid dataset is valid")
    }

    /// Dataset built from whole participant panels picked by index (with
    /// repetition). Copies are renamed `<id>#<draw>` to stay distinct.
    pub fn resample_participants(&self, picks: &[usize]) -> PlayDataset {
        let mut by_participant: HashMap<&str, Vec<&Observation>> = HashMap::new();
        for obs in &self.observations {
            by_participant.entry(obs.participant.as_str()).or_default().push(obs);
        }
        let mut observations = Vec::with_capacity(self.observations.len());
        for (draw, &idx) in picks.iter().enumerate() {
            let id = &self.participants[idx];
            for obs in &by_participant[id.as_str()] {
                let mut copy = (*obs).clone();
                copy.participant = format!("{id}#{draw}");
                observations.push(copy);
            }
        }
        PlayDataset::new(observations).expect("renamed copies are distinct")
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers().map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?;
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Csv {
                line: 1,
                message: format!("expected header {}", CSV_HEADER.join(",")),
            });
        }
        let mut observations = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| Error::Csv {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let fail = |message: String| Error::Csv { line, message };
            if record.len() != CSV_HEADER.len() {
                return Err(fail(format!(
                    "expected {} fields, found {}",
                    CSV_HEADER.len(),
                    record.len()
                )));
            }
            let participant = record[0].to_string();
            let game = record[1].to_string();
            if participant.is_empty() || game.is_empty() {
                return Err(fail("participant_id and game_id must be non-empty".into()));
            }
            let action = record[2]
                .parse::<usize>()
                .map_err(|_| fail(format!("invalid action {:?}", &record[2])))?;
            let optional = |field: &str, name: &str| -> Result<Option<usize>> {
                if field.is_empty() {
                    Ok(None)
                } else {
                    field
                        .parse::<usize>()
                        .map(Some)
                        .map_err(|_| fail(format!("invalid {name} {field:?}")))
                }
            };
            let opponent_action = optional(&record[3], "opponent_action")?;
            let order = optional(&record[4], "order")?;
            observations.push(Observation {
                participant,
                game,
                action,
                opponent_action,
                order,
            });
        }
        PlayDataset::new(observations)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        wtr.write_record(CSV_HEADER).map_err(io)?;
        for obs in &self.observations {
            let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
            wtr.write_record([
                obs.participant.clone(),
                obs.game.clone(),
                obs.action.to_string(),
                opt(obs.opponent_action),
                opt(obs.order),
            ])
            .map_err(io)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}
