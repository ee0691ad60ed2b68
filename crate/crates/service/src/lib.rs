//! Crowd annotation backend: batch issuing, gold-driven trust and a
//! replayable event log behind a small JSON API.

pub mod api;
pub mod study;

use std::fs::File;
use std::io::BufReader;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use harasskit_core::corpus::{ingest, Corpus, Format};
use harasskit_core::crowd::GoldSet;
use serde::{Deserialize, Serialize};

pub use api::{router, router_shared, Shared};
pub use study::{
    label_records, read_events, BatchItem, BatchOutcome, BatchView, Event, LabelEvent, Stats, Study, StudyConfig,
    StudyError, StudyState, SubmitOutcome,
};

/// On-disk description of a study, as read by `serve --config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    pub corpus: PathBuf,
    pub gold: PathBuf,
    pub event_log: PathBuf,
    #[serde(default = "default_host")]
    pub host: IpAddr,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_host() -> IpAddr {
    IpAddr::from([127, 0, 0, 1])
}

fn default_port() -> u16 {
    8080
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let f = File::open(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    pub fn load_inputs(&self) -> anyhow::Result<(Corpus, GoldSet)> {
        let corpus = ingest(&self.corpus, Format::from_path(&self.corpus))?;
        let gold = GoldSet::from_csv(File::open(&self.gold).map_err(|e| anyhow::anyhow!("{}: {e}", self.gold.display()))?)?;
        Ok((corpus, gold))
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }

    pub fn open_study(&self) -> anyhow::Result<Study> {
        let (corpus, gold) = self.load_inputs()?;
        Ok(Study::open(corpus, gold, self.study.clone(), &self.event_log)?)
    }
}

/// Serves until the process is stopped.
pub async fn serve(study: Study, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(study)).await?;
    Ok(())
}
