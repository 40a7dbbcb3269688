use std::io::Write;
use std::ops::ControlFlow;

use crate::tree::{Vertex, WeightedTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Infect,
    Recover,
    Censor,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Infect => "infect",
            EventKind::Recover => "recover",
            EventKind::Censor => "censor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub vertex: Vertex,
}

/// Read-only view of the configuration after an event.
pub struct View<'a> {
    pub tree: &'a WeightedTree,
    pub infected: &'a [bool],
    /// Infected vertices, extra root excluded.
    pub n_infected: usize,
    pub r: i32,
    pub time: f64,
}

/// Hook into a running trial. Returning `Break` ends the trial with
/// [`Censor::Stopped`](super::Censor::Stopped).
pub trait Observer {
    fn on_start(&mut self, _view: &View<'_>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }

    fn on_event(&mut self, _event: &Event, _view: &View<'_>) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }

    fn on_censor(&mut self, _time: f64, _view: &View<'_>) {}
}

pub struct NoObserver;

impl Observer for NoObserver {}

/// Writes `time,event_type,vertex,infected_count,depth` rows.
pub struct TrajectoryWriter<W: Write> {
    out: csv::Writer<W>,
    error: Option<csv::Error>,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W) -> csv::Result<Self> {
        let mut out = csv::Writer::from_writer(out);
        out.write_record(["time", "event_type", "vertex", "infected_count", "depth"])?;
        Ok(TrajectoryWriter { out, error: None })
    }

    fn row(&mut self, time: f64, kind: EventKind, vertex: Option<Vertex>, view: &View<'_>) {
        if self.error.is_some() {
            return;
        }
        let vertex = vertex.map_or(String::new(), |v| v.to_string());
        let res = self.out.write_record([
            format!("{time:.12e}"),
            kind.as_str().to_string(),
            vertex,
            view.n_infected.to_string(),
            view.r.to_string(),
        ]);
        if let Err(e) = res {
            self.error = Some(e);
        }
    }

    /// Flush and surface the first write error, if any.
    pub fn finish(mut self) -> csv::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.into_inner().map_err(|e| csv::Error::from(e.into_error()))
    }
}

impl<W: Write> Observer for TrajectoryWriter<W> {
    fn on_event(&mut self, event: &Event, view: &View<'_>) -> ControlFlow<()> {
        self.row(event.time, event.kind, Some(event.vertex), view);
        ControlFlow::Continue(())
    }

    fn on_censor(&mut self, time: f64, view: &View<'_>) {
        self.row(time, EventKind::Censor, None, view);
    }
}
