use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{OperationRecord, OperationalLog};
use crate::error::{Error, Result};
use crate::schedule::{Itinerary, LoggedTrain, Role};

pub const CSV_HEADER: [&str; 7] = [
    "train_id",
    "train_type",
    "station_id",
    "sequence_index",
    "role",
    "scheduled_time",
    "actual_time",
];

/// Discard fractions above this are logged as suspicious.
const SUSPICIOUS_DISCARD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub log: OperationalLog,
    pub total_trains: usize,
    /// Discarded train ids with the reason.
    pub discarded: Vec<(String, String)>,
}

impl IngestReport {
    pub fn discard_fraction(&self) -> f64 {
        if self.total_trains == 0 {
            0.0
        } else {
            self.discarded.len() as f64 / self.total_trains as f64
        }
    }
}

pub fn ingest_csv(path: &Path) -> Result<IngestReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

/// Parses a log or timetable CSV. The `actual_time` column may be omitted entirely, and lines
/// starting with `#` are ignored.
pub fn parse_csv(reader: impl Read) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let with_actual = header == CSV_HEADER;
    if !with_actual && header != CSV_HEADER[..6] {
        return Err(Error::Data(format!(
            "malformed header `{}`; expected `{}`",
            header.join(","),
            CSV_HEADER.join(",")
        )));
    }
    let width = header.len();

    let mut rows: BTreeMap<String, Vec<std::result::Result<OperationRecord, String>>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let Some(id) = rec.get(0).filter(|s| !s.is_empty()) else {
            log::warn!("row without train id at {:?} skipped", rec.position());
            continue;
        };
        let parsed = if rec.len() == width {
            parse_row(&rec)
        } else {
            Err(format!("row has {} fields, expected {width}", rec.len()))
        };
        rows.entry(id.to_string()).or_default().push(parsed);
    }

    let total_trains = rows.len();
    let mut trains = Vec::with_capacity(total_trains);
    let mut discarded = Vec::new();
    for (id, rows) in rows {
        match assemble(&id, rows) {
            Ok(t) => trains.push(t),
            Err(reason) => discarded.push((id, reason)),
        }
    }
    let report = IngestReport {
        log: OperationalLog::new(trains),
        total_trains,
        discarded,
    };
    if total_trains == 0 {
        log::warn!("log contains no trains");
    } else if report.discard_fraction() > SUSPICIOUS_DISCARD {
        log::warn!(
            "discarded {} of {} trains ({:.1}%): suspicious input",
            report.discarded.len(),
            total_trains,
            100.0 * report.discard_fraction()
        );
    }
    Ok(report)
}

fn parse_row(rec: &csv::StringRecord) -> std::result::Result<OperationRecord, String> {
    let field = |i: usize| rec.get(i).unwrap_or("");
    let int = |i: usize| -> std::result::Result<i64, String> {
        field(i)
            .parse()
            .map_err(|_| format!("bad {} `{}`", CSV_HEADER[i], field(i)))
    };
    let actual_time = match field(6) {
        "" => None,
        _ => Some(int(6)?),
    };
    Ok(OperationRecord {
        train_id: field(0).to_string(),
        train_type: field(1).parse().map_err(|e: Error| e.to_string())?,
        station_id: field(2).to_string(),
        sequence_index: field(3)
            .parse()
            .map_err(|_| format!("bad sequence_index `{}`", field(3)))?,
        role: field(4).parse().map_err(|e: Error| e.to_string())?,
        scheduled_time: int(5)?,
        actual_time,
    })
}

fn assemble(
    id: &str,
    rows: Vec<std::result::Result<OperationRecord, String>>,
) -> std::result::Result<LoggedTrain, String> {
    let mut rows = rows.into_iter().collect::<std::result::Result<Vec<_>, _>>()?;
    rows.sort_by_key(|r| r.sequence_index);
    let m = rows.len();
    let train_type = rows[0].train_type;
    if rows.iter().any(|r| r.train_type != train_type) {
        return Err("train type changes between rows".into());
    }
    for (j, r) in rows.iter().enumerate() {
        if r.sequence_index != j + 1 {
            return Err(format!("sequence_index {} out of order", r.sequence_index));
        }
        let expected = match j {
            0 => Role::Departure,
            j if j + 1 == m => Role::Arrival,
            _ => Role::Passage,
        };
        if r.role != expected {
            return Err(format!("role {} at position {}", r.role.as_str(), j + 1));
        }
    }
    let stops: Vec<(String, i64)> = rows.iter().map(|r| (r.station_id.clone(), r.scheduled_time)).collect();
    let itinerary = Itinerary::new(id, train_type, &stops).map_err(|e| e.to_string())?;

    let actual: Vec<Option<i64>> = rows.iter().map(|r| r.actual_time).collect();
    let realized = actual.iter().take_while(|a| a.is_some()).count();
    if actual[realized..].iter().any(Option::is_some) {
        return Err("missing actual time before a recorded one".into());
    }
    let times: Vec<i64> = actual[..realized].iter().flatten().copied().collect();
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err("actual times decrease".into());
    }
    if times.first().is_some_and(|&t| t < itinerary.window_open()) {
        return Err("actual departure precedes the activity window".into());
    }
    Ok(LoggedTrain {
        itinerary: Arc::new(itinerary),
        actual,
    })
}

/// Writes the log with the full schema; unrealized stops have an empty `actual_time`.
pub fn write_csv(log: &OperationalLog, writer: impl Write) -> Result<()> {
    write_tagged_csv(log, &[], true, writer)
}

/// Writes `# key=value` comment lines, then the log. Without `actual`, the `actual_time`
/// column is left out, which is the timetable form.
pub fn write_tagged_csv(
    log: &OperationalLog,
    meta: &[(&str, String)],
    actual: bool,
    mut writer: impl Write,
) -> Result<()> {
    let io_err = |e| Error::io(Path::new("<csv>"), e);
    for (k, v) in meta {
        writeln!(writer, "# {k}={v}").map_err(io_err)?;
    }
    let width = if actual { CSV_HEADER.len() } else { CSV_HEADER.len() - 1 };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&CSV_HEADER[..width])?;
    for r in log.records() {
        let row = [
            r.train_id,
            r.train_type.as_str().to_string(),
            r.station_id,
            r.sequence_index.to_string(),
            r.role.as_str().to_string(),
            r.scheduled_time.to_string(),
            r.actual_time.map(|t| t.to_string()).unwrap_or_default(),
        ];
        w.write_record(&row[..width])?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::TrainType;

    const HEAD: &str = "train_id,train_type,station_id,sequence_index,role,scheduled_time,actual_time\n";

    fn parse(body: &str) -> IngestReport {
        parse_csv(format!("{HEAD}{body}").as_bytes()).unwrap()
    }

    const CLEAN: &str = "\
a,regional,X,1,departure,1000,1000
a,regional,Y,2,passage,1100,1130
a,regional,Z,3,arrival,1200,1210
b,intercity,Z,1,departure,2000,2005
b,intercity,X,2,arrival,2300,
";

    #[test]
    fn clean_file() {
        let r = parse(CLEAN);
        assert_eq!(r.log.len(), 2);
        assert_eq!(r.discard_fraction(), 0.0);
        let b = r.log.get("b").unwrap();
        assert_eq!(b.actual, vec![Some(2005), None]);
        assert_eq!(b.itinerary.train_type, TrainType::Intercity);
    }

    #[test]
    fn decreasing_actual_discards_only_that_train() {
        let body = CLEAN.replace("1100,1130", "1100,990");
        let r = parse(&body);
        assert_eq!(r.log.len(), 1);
        assert_eq!(r.discarded[0].0, "a");
        assert!((r.discard_fraction() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gaps_and_bad_fields_discard() {
        for bad in [
            CLEAN.replace("1100,1130", "1100,"),
            CLEAN.replace(",2,passage,", ",4,passage,"),
            CLEAN.replace("passage,1100", "passage,xx"),
            CLEAN.replace("Y,2,passage", "Y,2,arrival"),
            CLEAN.replace("1000,1000", "1000,600"),
        ] {
            let r = parse(&bad);
            assert_eq!(r.log.len(), 1, "{bad}");
            assert_eq!(r.total_trains, 2);
        }
    }

    #[test]
    fn rows_may_arrive_unordered() {
        let shuffled: String = CLEAN.lines().rev().map(|l| format!("{l}\n")).collect();
        assert_eq!(parse(&shuffled).log, parse(CLEAN).log);
    }

    #[test]
    fn empty_and_header_errors() {
        let r = parse("");
        assert!(r.log.is_empty());
        assert_eq!(r.discard_fraction(), 0.0);
        assert!(parse_csv("a,b,c\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn timetable_without_actual_column() {
        let text = "train_id,train_type,station_id,sequence_index,role,scheduled_time\n\
                    t,freight,A,1,departure,10\nt,freight,B,2,arrival,50\n";
        let r = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(r.log.trains[0].actual, vec![None, None]);
    }

    #[test]
    fn write_then_ingest_is_identity() {
        let first = parse(CLEAN).log;
        let mut buf = Vec::new();
        write_csv(&first, &mut buf).unwrap();
        let second = parse_csv(buf.as_slice()).unwrap().log;
        assert_eq!(first, second);
        let mut again = Vec::new();
        write_csv(&second, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn tagged_output_round_trips() {
        let first = parse(CLEAN).log;
        let mut buf = Vec::new();
        write_tagged_csv(&first, &[("seed", "7".into())], true, &mut buf).unwrap();
        assert!(buf.starts_with(b"# seed=7\n"));
        assert_eq!(parse_csv(buf.as_slice()).unwrap().log, first);
        let mut tt = Vec::new();
        write_tagged_csv(&first, &[], false, &mut tt).unwrap();
        let back = parse_csv(tt.as_slice()).unwrap().log;
        assert!(back.trains.iter().all(|t| t.actual.iter().all(Option::is_none)));
    }
}
