//! Message transports. Entities exchange ordered messages; the default keeps
//! them in memory, the TCP variant ships every message as a length-prefixed
//! JSON frame over a localhost socket to a collector and reads the transcript
//! back from what actually crossed the wire.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread::JoinHandle;

use crate::transcript::{Transcript, TranscriptEntry};
use crate::OrchError;

pub trait Transport {
    fn send(&mut self, entry: &TranscriptEntry) -> Result<(), OrchError>;
    fn finish(self: Box<Self>) -> Result<Transcript, OrchError>;
}

/// Ordered, lossless in-process channel: the default for single-process runs.
#[derive(Default)]
pub struct InProcTransport {
    entries: Vec<TranscriptEntry>,
}

impl Transport for InProcTransport {
    fn send(&mut self, entry: &TranscriptEntry) -> Result<(), OrchError> {
        self.entries.push(entry.clone());
        Ok(())
    }

    fn finish(self: Box<Self>) -> Result<Transcript, OrchError> {
        Ok(Transcript { entries: self.entries })
    }
}

/// Writes one frame: 4-byte big-endian length, then the JSON body.
pub fn write_frame<W: Write>(w: &mut W, entry: &TranscriptEntry) -> Result<(), OrchError> {
    let body = serde_json::to_vec(entry)?;
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean EOF at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<TranscriptEntry>, OrchError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut body)?;
    Ok(Some(serde_json::from_slice(&body)?))
}

/// Localhost TCP transport: frames are sent to a collector thread which
/// preserves per-channel ordering; `finish` returns what was received.
pub struct TcpTransport {
    stream: TcpStream,
    collector: JoinHandle<Result<Vec<TranscriptEntry>, OrchError>>,
}

impl TcpTransport {
    pub fn loopback() -> Result<Self, OrchError> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let (ready_tx, ready_rx) = mpsc::channel();
        let collector = std::thread::spawn(move || -> Result<Vec<TranscriptEntry>, OrchError> {
            ready_tx.send(()).ok();
            let (mut conn, _) = listener.accept()?;
            let mut entries = Vec::new();
            while let Some(entry) = read_frame(&mut conn)? {
                entries.push(entry);
            }
            Ok(entries)
        });
        ready_rx.recv().map_err(|_| OrchError::TransportClosed)?;
        let stream = TcpStream::connect(addr)?;
        Ok(TcpTransport { stream, collector })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, entry: &TranscriptEntry) -> Result<(), OrchError> {
        write_frame(&mut self.stream, entry)
    }

    fn finish(self: Box<Self>) -> Result<Transcript, OrchError> {
        self.stream.shutdown(std::net::Shutdown::Write)?;
        let entries = self.collector.join().map_err(|_| OrchError::TransportClosed)??;
        Ok(Transcript { entries })
    }
}
