//! Choice data: the long-format `participant,round,choice` table, weekly
//! windows, pooled counts and synthetic traces drawn from a known hierarchy.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::ops::RangeInclusive;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::hierarchy::{build_hierarchy, LevelDistribution};
use crate::ipl::AgentTrace;
use crate::scalar::Scalar;

pub const CHOICES_HEADER: [&str; 3] = ["participant", "round", "choice"];
pub const WINNERS_HEADER: [&str; 2] = ["round", "winning_number"];
pub const ROUNDS_PER_WEEK: u32 = 7;

/// Expected extent of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetShape {
    /// Highest admissible choice.
    pub k: u32,
    /// Highest admissible round index.
    pub rounds: u32,
    /// Required participant count, if any.
    pub participants: Option<usize>,
}

impl DatasetShape {
    /// 38 participants, 49 rounds, choices 1..=99.
    pub const LAB: DatasetShape = DatasetShape {
        k: 99,
        rounds: 49,
        participants: Some(38),
    };

    /// Any participant count, any number of rounds.
    pub fn open(k: u32) -> Self {
        DatasetShape {
            k,
            rounds: u32::MAX,
            participants: None,
        }
    }
}

/// Validated choice table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabDataset {
    k: u32,
    /// participant → round → choice
    choices: BTreeMap<u32, BTreeMap<u32, u32>>,
    winners: Option<BTreeMap<u32, Option<u32>>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ChoiceRow {
    participant: u32,
    round: u32,
    choice: i64,
}

#[derive(Debug, Deserialize)]
struct WinnerRow {
    round: u32,
    winning_number: Option<u32>,
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn check_header(rdr: &mut csv::Reader<impl Read>, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(csv_error)?;
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

impl LabDataset {
    /// Parses and validates a choice table.
    pub fn read<R: Read>(reader: R, shape: DatasetShape) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(&mut rdr, &CHOICES_HEADER)?;

        let mut choices: BTreeMap<u32, BTreeMap<u32, u32>> = BTreeMap::new();
        let mut offenders = Vec::new();
        for row in rdr.deserialize::<ChoiceRow>() {
            let row = row.map_err(csv_error)?;
            if row.round == 0 || row.round > shape.rounds {
                offenders.push(format!(
                    "participant {} round {} outside 1..={}",
                    row.participant, row.round, shape.rounds
                ));
                continue;
            }
            if row.choice < 1 || row.choice > i64::from(shape.k) {
                offenders.push(format!(
                    "participant {} round {} choice {} outside 1..={}",
                    row.participant, row.round, row.choice, shape.k
                ));
                continue;
            }
            let prev = choices
                .entry(row.participant)
                .or_default()
                .insert(row.round, row.choice as u32);
            if prev.is_some() {
                offenders.push(format!(
                    "participant {} round {} recorded twice",
                    row.participant, row.round
                ));
            }
        }
        if !offenders.is_empty() {
            return Err(Error::Validation(offenders.join("; ")));
        }
        if let Some(n) = shape.participants {
            if choices.len() != n {
                return Err(Error::Validation(format!(
                    "expected {n} participants, found {}",
                    choices.len()
                )));
            }
        }
        Ok(LabDataset {
            k: shape.k,
            choices,
            winners: None,
        })
    }

    /// Parses the optional `round,winning_number` table.
    pub fn read_winners<R: Read>(&mut self, reader: R) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_header(&mut rdr, &WINNERS_HEADER)?;
        let mut winners = BTreeMap::new();
        for row in rdr.deserialize::<WinnerRow>() {
            let row = row.map_err(csv_error)?;
            if let Some(w) = row.winning_number {
                if w == 0 || w > self.k {
                    return Err(Error::Validation(format!(
                        "round {} winning number {w} outside 1..={}",
                        row.round, self.k
                    )));
                }
            }
            winners.insert(row.round, row.winning_number);
        }
        self.winners = Some(winners);
        Ok(())
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        for (&participant, rounds) in &self.choices {
            for (&round, &choice) in rounds {
                wtr.serialize(ChoiceRow {
                    participant,
                    round,
                    choice: i64::from(choice),
                })
                .map_err(csv_error)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Builds a dataset from traces, numbering rounds from 1.
    pub fn from_traces<T: Scalar>(traces: &[AgentTrace<T>]) -> Result<Self> {
        let k = traces.first().map_or(0, |t| t.freq().len());
        let mut choices = BTreeMap::new();
        for t in traces {
            let rounds: BTreeMap<u32, u32> = t
                .choices()
                .iter()
                .enumerate()
                .map(|(i, &c)| (i as u32 + 1, c as u32))
                .collect();
            if choices.insert(t.agent_id(), rounds).is_some() {
                return Err(Error::Validation(format!("duplicate agent id {}", t.agent_id())));
            }
        }
        Ok(LabDataset {
            k: k as u32,
            choices,
            winners: None,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn participants(&self) -> impl Iterator<Item = u32> + '_ {
        self.choices.keys().copied()
    }

    pub fn participant_count(&self) -> usize {
        self.choices.len()
    }

    pub fn record_count(&self) -> usize {
        self.choices.values().map(BTreeMap::len).sum()
    }

    /// Highest round index present.
    pub fn max_round(&self) -> u32 {
        self.choices
            .values()
            .filter_map(|r| r.keys().next_back().copied())
            .max()
            .unwrap_or(0)
    }

    pub fn choice(&self, participant: u32, round: u32) -> Option<u32> {
        self.choices.get(&participant)?.get(&round).copied()
    }

    pub fn winners(&self) -> Option<&BTreeMap<u32, Option<u32>>> {
        self.winners.as_ref()
    }

    /// Number of complete weeks covered by the data.
    pub fn week_count(&self) -> u32 {
        self.max_round() / ROUNDS_PER_WEEK
    }
}

pub fn load_lab_dataset(path: impl AsRef<Path>, shape: DatasetShape) -> Result<LabDataset> {
    LabDataset::read(File::open(path)?, shape)
}

/// Seven consecutive rounds: week `w` covers rounds `7(w-1)+1 ..= 7w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekWindow {
    week: u32,
}

impl WeekWindow {
    /// `week` must lie in `1..=total_rounds / 7`.
    pub fn new(week: u32, total_rounds: u32) -> Result<Self> {
        let weeks = total_rounds / ROUNDS_PER_WEEK;
        if week == 0 || week > weeks {
            return Err(Error::arg(format!("week {week} outside 1..={weeks}")));
        }
        Ok(WeekWindow { week })
    }

    pub fn week(&self) -> u32 {
        self.week
    }

    pub fn rounds(&self) -> RangeInclusive<u32> {
        ROUNDS_PER_WEEK * (self.week - 1) + 1..=ROUNDS_PER_WEEK * self.week
    }
}

/// One trace per participant holding their choices in `rounds`.
pub fn window_traces<T: Scalar>(ds: &LabDataset, rounds: RangeInclusive<u32>) -> Result<Vec<AgentTrace<T>>> {
    if rounds.is_empty() {
        return Err(Error::arg("empty round window"));
    }
    ds.choices
        .iter()
        .map(|(&participant, by_round)| {
            let picks = rounds
                .clone()
                .map(|round| {
                    by_round
                        .get(&round)
                        .map(|&c| c as usize)
                        .ok_or(Error::MissingChoice { participant, round })
                })
                .collect::<Result<Vec<_>>>()?;
            AgentTrace::new(participant, picks, ds.k as usize)
        })
        .collect()
}

pub fn weekly_traces<T: Scalar>(ds: &LabDataset, week: &WeekWindow) -> Result<Vec<AgentTrace<T>>> {
    window_traces(ds, week.rounds())
}

/// Total occurrences of each action over all traces.
pub fn pooled_counts<T: Scalar>(traces: &[AgentTrace<T>]) -> Vec<T> {
    let k = traces.first().map_or(0, |t| t.freq().len());
    let mut counts = vec![0usize; k];
    for t in traces {
        for &c in t.choices() {
            counts[c - 1] += 1;
        }
    }
    counts.into_iter().map(T::from_count).collect()
}

/// Index drawn from the cumulative distribution of `weights`.
fn sample_index<T: Scalar, R: Rng>(cumulative: &[T], rng: &mut R) -> usize {
    let u = T::lit(rng.random::<f64>()) * *cumulative.last().unwrap();
    // first index whose cumulative mass exceeds u, skipping zero-width cells
    let i = cumulative.partition_point(|&c| c <= u);
    i.min(cumulative.len() - 1)
}

fn cumulative<T: Scalar>(w: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    w.iter()
        .map(|&x| {
            acc = acc + x;
            acc
        })
        .collect()
}

/// Draws traces from the per-agent level mixtures.
///
/// The hierarchy is built from the average of `true_betas` at `lambda`;
/// each round an agent's level is drawn from its own beta and the action
/// from that level's strategy. Agent ids are `1..=true_betas.len()`.
pub fn synthesize_traces<T: Scalar>(
    true_betas: &[LevelDistribution<T>],
    lambda: T,
    spec: &GameSpec<T>,
    rounds_per_agent: usize,
    seed: u64,
) -> Result<Vec<AgentTrace<T>>> {
    if true_betas.is_empty() {
        return Err(Error::arg("need at least one agent"));
    }
    if rounds_per_agent == 0 {
        return Err(Error::arg("need at least one round per agent"));
    }
    let population = crate::ipl::aggregate_betas(true_betas)?;
    let hierarchy = build_hierarchy(&population, lambda, spec)?;
    let level_cdfs: Vec<Vec<T>> = hierarchy.levels().iter().map(|s| cumulative(s.probs())).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    true_betas
        .iter()
        .enumerate()
        .map(|(i, beta)| {
            let beta_cdf = cumulative(beta.weights());
            let picks = (0..rounds_per_agent)
                .map(|_| {
                    let level = sample_index(&beta_cdf, &mut rng);
                    sample_index(&level_cdfs[level], &mut rng) + 1
                })
                .collect();
            AgentTrace::new(i as u32 + 1, picks, spec.k())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    type Strategy = crate::game::Strategy<f64>;
    type GameSpec = crate::game::GameSpec<f64>;
    type LevelDistribution = crate::hierarchy::LevelDistribution<f64>;

    const FIXTURE: &str = "participant,round,choice\n1,1,3\n1,2,5\n2,1,1\n2,2,99\n";

    #[test]
    fn reads_small_fixture() {
        let ds = LabDataset::read(FIXTURE.as_bytes(), DatasetShape::open(99)).unwrap();
        assert_eq!(ds.record_count(), 4);
        assert_eq!(ds.participant_count(), 2);
        assert_eq!(ds.choice(2, 2), Some(99));
        assert_eq!(ds.max_round(), 2);
    }

    #[test]
    fn rejects_out_of_range_choice() {
        let data = "participant,round,choice\n1,1,0\n1,2,100\n";
        match LabDataset::read(data.as_bytes(), DatasetShape::open(99)) {
            Err(Error::Validation(msg)) => {
                assert!(msg.contains("choice 0") && msg.contains("choice 100"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_row_with_line() {
        let data = "participant,round,choice\n1,1,3\n1,x,3\n";
        match LabDataset::read(data.as_bytes(), DatasetShape::open(99)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_header_and_duplicates() {
        assert!(LabDataset::read("id,round,choice\n".as_bytes(), DatasetShape::open(99)).is_err());
        let dup = "participant,round,choice\n1,1,3\n1,1,4\n";
        assert!(matches!(
            LabDataset::read(dup.as_bytes(), DatasetShape::open(99)),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn participant_count_enforced() {
        let shape = DatasetShape {
            participants: Some(38),
            ..DatasetShape::open(99)
        };
        assert!(LabDataset::read(FIXTURE.as_bytes(), shape).is_err());
    }

    #[test]
    fn winners_table() {
        let mut ds = LabDataset::read(FIXTURE.as_bytes(), DatasetShape::open(99)).unwrap();
        ds.read_winners("round,winning_number\n1,3\n2,\n".as_bytes()).unwrap();
        let w = ds.winners().unwrap();
        assert_eq!(w[&1], Some(3));
        assert_eq!(w[&2], None);
        assert!(ds.read_winners("round,winning_number\n1,0\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read_is_identity() {
        let ds = LabDataset::read(FIXTURE.as_bytes(), DatasetShape::open(99)).unwrap();
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), FIXTURE);
        let again = LabDataset::read(buf.as_slice(), DatasetShape::open(99)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn week_windows() {
        let w = WeekWindow::new(1, 49).unwrap();
        assert_eq!(w.rounds(), 1..=7);
        assert_eq!(WeekWindow::new(7, 49).unwrap().rounds(), 43..=49);
        assert!(WeekWindow::new(8, 49).is_err());
        assert!(WeekWindow::new(0, 49).is_err());
    }

    fn full_week_dataset() -> LabDataset {
        let mut s = String::from("participant,round,choice\n");
        for p in 1..=3 {
            for r in 1..=14 {
                s.push_str(&format!("{p},{r},{}\n", (p * r) % 10 + 1));
            }
        }
        LabDataset::read(s.as_bytes(), DatasetShape::open(99)).unwrap()
    }

    #[test]
    fn weekly_traces_and_pooling() {
        let ds = full_week_dataset();
        let week = WeekWindow::new(2, ds.max_round()).unwrap();
        let traces: Vec<AgentTrace<f64>> = weekly_traces(&ds, &week).unwrap();
        assert_eq!(traces.len(), 3);
        assert!(traces.iter().all(|t| t.choices().len() == 7));
        let counts = pooled_counts(&traces);
        assert_eq!(counts.iter().sum::<f64>(), 21.0);
    }

    #[test]
    fn weekly_traces_name_gaps() {
        let data = "participant,round,choice\n1,1,3\n1,2,5\n1,3,5\n1,4,5\n1,5,5\n1,6,5\n1,7,5\n2,1,1\n";
        let ds = LabDataset::read(data.as_bytes(), DatasetShape::open(99)).unwrap();
        let week = WeekWindow::new(1, 7).unwrap();
        match weekly_traces::<f64>(&ds, &week) {
            Err(Error::MissingChoice { participant, round }) => assert_eq!((participant, round), (2, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pooled_counts_single_trace() {
        let t = AgentTrace::<f64>::new(1, vec![1, 1, 2], 3).unwrap();
        assert_eq!(pooled_counts(&[t]), vec![2.0, 1.0, 0.0]);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = GameSpec::lab();
        let betas = vec![LevelDistribution::uniform(3); 3];
        let a = synthesize_traces(&betas, 6.0, &spec, 10, 99).unwrap();
        let b = synthesize_traces(&betas, 6.0, &spec, 10, 99).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        LabDataset::from_traces(&a).unwrap().write(&mut ba).unwrap();
        LabDataset::from_traces(&b).unwrap().write(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = synthesize_traces(&betas, 6.0, &spec, 10, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthesis_zero_precision_is_uniform() {
        let spec = GameSpec::new(4, 3.0, 1.0).unwrap();
        let betas = vec![LevelDistribution::point_mass(2, 2).unwrap(); 2];
        let t = synthesize_traces(&betas, 0.0, &spec, 40_000, 5).unwrap();
        let freq = Strategy::from_counts(&pooled_counts(&t)).unwrap();
        assert!(freq.probs().iter().all(|&p| (p - 0.25).abs() < 0.01));
    }

    #[test]
    fn sampling_skips_zero_mass_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cdf = cumulative(&[0.0, 0.5, 0.0, 0.5, 0.0]);
        for _ in 0..1000 {
            let i = sample_index(&cdf, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
