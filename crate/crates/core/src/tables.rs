//! CSV interchange: set summaries, participant metadata, annotations and
//! the per-video angle and repetition tables.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kinematics::AngleSeries;
use crate::model::{BodySide, ExerciseKind, RomCondition, Sex};
use crate::segmentation::{Repetition, VideoOutcome};
use crate::set_metrics::{OutcomeKind, SetSummary};

pub const SUMMARY_COLUMNS: [&str; 8] = [
    "participant_id",
    "exercise",
    "rom_condition",
    "outcome",
    "mean",
    "sd",
    "k",
    "side_left_fraction",
];
pub const PARTICIPANT_COLUMNS: [&str; 2] = ["participant_id", "sex"];
pub const ANNOTATION_COLUMNS: [&str; 3] = ["video_id", "side", "rep_count"];
pub const ANGLE_COLUMNS: [&str; 6] = ["t", "angle", "valid", "joint", "side", "mode"];
pub const REPETITION_COLUMNS: [&str; 11] = [
    "video_id",
    "rep_index",
    "start_s",
    "end_s",
    "start_angle",
    "end_angle",
    "rom_deg",
    "duration_s",
    "concentric_s",
    "eccentric_s",
    "side",
];

/// Rows of a CSV with required columns located by header name. Row numbers
/// in errors count the header as row 1.
struct Table {
    index: Vec<usize>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read<R: Read>(reader: R, required: &[&str]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let index = required
            .iter()
            .map(|col| {
                headers.iter().position(|h| h == *col).ok_or_else(|| Error::Schema {
                    row: 1,
                    message: format!("missing column {col:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            records.push(rec.map_err(|e| Error::Schema {
                row: i + 2,
                message: e.to_string(),
            })?);
        }
        Ok(Self { index, records })
    }

    fn rows(&self) -> impl Iterator<Item = Row<'_>> {
        self.records.iter().enumerate().map(move |(i, rec)| Row {
            number: i + 2,
            rec,
            index: &self.index,
        })
    }
}

struct Row<'a> {
    number: usize,
    rec: &'a csv::StringRecord,
    index: &'a [usize],
}

impl Row<'_> {
    fn raw(&self, col: usize) -> &str {
        self.rec.get(self.index[col]).unwrap_or("")
    }

    fn get<V: FromStr>(&self, col: usize, name: &str) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        let raw = self.raw(col);
        raw.parse().map_err(|e| Error::Schema {
            row: self.number,
            message: format!("column {name:?}: cannot parse {raw:?}: {e}"),
        })
    }

    fn text(&self, col: usize, name: &str) -> Result<String> {
        let raw = self.raw(col);
        if raw.is_empty() {
            return Err(Error::Schema {
                row: self.number,
                message: format!("column {name:?} is empty"),
            });
        }
        Ok(raw.to_string())
    }

    fn fail(&self, e: Error) -> Error {
        Error::Schema {
            row: self.number,
            message: e.to_string(),
        }
    }
}

/// Reads set summaries. Sex is not part of this table; see [`attach_sex`].
pub fn read_set_summaries<R: Read>(reader: R) -> Result<Vec<SetSummary<f64>>> {
    let table = Table::read(reader, &SUMMARY_COLUMNS)?;
    table
        .rows()
        .map(|r| {
            let s = SetSummary {
                participant_id: r.text(0, SUMMARY_COLUMNS[0])?,
                exercise: r.get::<ExerciseKind>(1, SUMMARY_COLUMNS[1])?,
                rom_condition: r.get::<RomCondition>(2, SUMMARY_COLUMNS[2])?,
                sex: None,
                outcome: r.get::<OutcomeKind>(3, SUMMARY_COLUMNS[3])?,
                mean: r.get(4, SUMMARY_COLUMNS[4])?,
                sd: r.get(5, SUMMARY_COLUMNS[5])?,
                k: r.get(6, SUMMARY_COLUMNS[6])?,
                side_left_fraction: r.get(7, SUMMARY_COLUMNS[7])?,
            };
            s.validate().map_err(|e| r.fail(e))?;
            Ok(s)
        })
        .collect()
}

pub fn write_set_summaries<W: Write>(writer: W, summaries: &[SetSummary<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        w.write_record([
            s.participant_id.clone(),
            s.exercise.name().to_string(),
            s.rom_condition.to_string(),
            s.outcome.to_string(),
            s.mean.to_string(),
            s.sd.to_string(),
            s.k.to_string(),
            s.side_left_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_participants<R: Read>(reader: R) -> Result<BTreeMap<String, Sex>> {
    let table = Table::read(reader, &PARTICIPANT_COLUMNS)?;
    let mut map = BTreeMap::new();
    for r in table.rows() {
        let id = r.text(0, PARTICIPANT_COLUMNS[0])?;
        let sex: Sex = r.get(1, PARTICIPANT_COLUMNS[1])?;
        if map.insert(id.clone(), sex).is_some() {
            return Err(Error::Schema {
                row: r.number,
                message: format!("duplicate participant {id:?}"),
            });
        }
    }
    Ok(map)
}

/// Fills `sex` from participant metadata; a participant absent from the
/// metadata is a build error.
pub fn attach_sex(summaries: &mut [SetSummary<f64>], participants: &BTreeMap<String, Sex>) -> Result<()> {
    for s in summaries {
        let sex = participants
            .get(&s.participant_id)
            .ok_or_else(|| Error::Build(format!("participant {:?} missing from metadata", s.participant_id)))?;
        s.sex = Some(*sex);
    }
    Ok(())
}

pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<VideoOutcome>> {
    let table = Table::read(reader, &ANNOTATION_COLUMNS)?;
    table
        .rows()
        .map(|r| {
            Ok(VideoOutcome {
                video_id: r.text(0, ANNOTATION_COLUMNS[0])?,
                side: r.get::<BodySide>(1, ANNOTATION_COLUMNS[1])?,
                rep_count: r.get(2, ANNOTATION_COLUMNS[2])?,
            })
        })
        .collect()
}

pub fn write_annotations<W: Write>(writer: W, outcomes: &[VideoOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ANNOTATION_COLUMNS)?;
    for o in outcomes {
        w.write_record([o.video_id.as_str(), o.side.as_str(), &o.rep_count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per sample; invalid samples have an empty angle.
pub fn write_angle_series<W: Write>(writer: W, series: &AngleSeries<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ANGLE_COLUMNS)?;
    let joint = series.joint().kind.as_str();
    let side = series.side().as_str();
    let mode = series.source_mode().as_str();
    for s in series.samples() {
        let angle = s.angle.map(|a| a.to_string()).unwrap_or_default();
        w.write_record([
            s.timestamp.to_string(),
            angle,
            s.is_valid().to_string(),
            joint.into(),
            side.into(),
            mode.into(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Repetition table of one video; `first_index` is the index of `reps[0]`
/// within the video's detected repetitions.
pub fn write_repetitions<W: Write>(writer: W, video_id: &str, side: BodySide, reps: &[Repetition<f64>], first_index: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPETITION_COLUMNS)?;
    for (i, r) in reps.iter().enumerate() {
        w.write_record([
            video_id.to_string(),
            (first_index + i).to_string(),
            r.start_time.to_string(),
            r.end_time.to_string(),
            r.start_angle.to_string(),
            r.end_angle.to_string(),
            r.rom.to_string(),
            r.duration.to_string(),
            r.concentric_duration.to_string(),
            r.eccentric_duration.to_string(),
            side.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(pid: &str, cond: RomCondition, mean: f64) -> SetSummary<f64> {
        SetSummary {
            participant_id: pid.into(),
            exercise: ExerciseKind::InclinePress,
            rom_condition: cond,
            sex: None,
            outcome: OutcomeKind::RangeOfMotion,
            mean,
            sd: 3.25,
            k: 6,
            side_left_fraction: 1.0,
        }
    }

    #[test]
    fn summaries_round_trip() {
        let rows = vec![
            summary("P01", RomCondition::Full, 100.0 / 3.0),
            summary("P01", RomCondition::Partial, 51.5),
        ];
        let mut buf = Vec::new();
        write_set_summaries(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("participant_id,exercise,rom_condition,outcome,mean,sd,k,side_left_fraction\n"));
        assert_eq!(read_set_summaries(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn malformed_rows_report_row_number() {
        let header = SUMMARY_COLUMNS.join(",");
        let text = format!("{header}\nP01,InclinePress,fROM,rom,90,3,6,1\nP02,InclinePress,fROM,rom,abc,3,6,1\n");
        match read_set_summaries(text.as_bytes()) {
            Err(Error::Schema { row, message }) => {
                assert_eq!(row, 3);
                assert!(message.contains("mean"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let text = format!("{header}\nP01,InclinePress,fROM,rom,90,3,1,1\n");
        assert!(matches!(read_set_summaries(text.as_bytes()), Err(Error::Schema { row: 2, .. })));
        let text = "participant_id,exercise\nP01,InclinePress\n";
        match read_set_summaries(text.as_bytes()) {
            Err(Error::Schema { row: 1, message }) => assert!(message.contains("rom_condition")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn participants_and_sex() {
        let meta = read_participants("participant_id,sex\nP01,F\nP02,M\n".as_bytes()).unwrap();
        let mut rows = vec![summary("P01", RomCondition::Full, 90.0)];
        attach_sex(&mut rows, &meta).unwrap();
        assert_eq!(rows[0].sex, Some(Sex::F));
        let mut missing = vec![summary("P09", RomCondition::Full, 90.0)];
        assert!(matches!(attach_sex(&mut missing, &meta), Err(Error::Build(_))));
        assert!(read_participants("participant_id,sex\nP01,F\nP01,M\n".as_bytes()).is_err());
    }

    #[test]
    fn annotations_round_trip() {
        let a = vec![VideoOutcome {
            video_id: "v1".into(),
            side: BodySide::Right,
            rep_count: 7,
        }];
        let mut buf = Vec::new();
        write_annotations(&mut buf, &a).unwrap();
        assert_eq!(read_annotations(&buf[..]).unwrap(), a);
    }

    #[test]
    fn empty_repetition_table_has_header() {
        let mut buf = Vec::new();
        write_repetitions(&mut buf, "v", BodySide::Left, &[], 0).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", REPETITION_COLUMNS.join(",")));
    }
}
