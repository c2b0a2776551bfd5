//! TCP transport for a [`Session`]: one client at a time, the session
//! survives disconnects.

use std::future::Future;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::Notify;

use crate::protocol::{read_message, write_message, ControlMessage};
use crate::session::Session;
use crate::TeleopError;

pub const TICK_HZ: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TickMode {
    /// One tick per received message. Used for scripted clients and tests.
    Lockstep,
    /// Fixed-rate ticks; each tick consumes the latest message, if any.
    Realtime { hz: f64 },
}

impl Default for TickMode {
    fn default() -> Self {
        TickMode::Realtime { hz: TICK_HZ }
    }
}

pub async fn bind(addr: impl ToSocketAddrs) -> Result<TcpListener, TeleopError> {
    TcpListener::bind(addr).await.map_err(|e| TeleopError::Bind(e.to_string()))
}

/// Serves clients one after another until `shutdown` resolves, then returns
/// the session.
pub async fn serve(
    listener: TcpListener,
    mut session: Session,
    mode: TickMode,
    shutdown: impl Future<Output = ()>,
) -> Result<Session, TeleopError> {
    tokio::pin!(shutdown);
    loop {
        let stream = tokio::select! {
            _ = &mut shutdown => return Ok(session),
            accepted = listener.accept() => accepted?.0,
        };
        let result = tokio::select! {
            _ = &mut shutdown => return Ok(session),
            r = handle(stream, &mut session, mode) => r,
        };
        match result {
            Ok(()) => tracing::info!("client disconnected"),
            Err(e) => tracing::warn!(error = %e, "closing connection"),
        }
    }
}

async fn handle(stream: TcpStream, session: &mut Session, mode: TickMode) -> Result<(), TeleopError> {
    stream.set_nodelay(true)?;
    let (mut rd, mut wr) = stream.into_split();
    write_message(&mut wr, &session.handshake()).await?;
    match mode {
        TickMode::Lockstep => {
            while let Some(msg) = read_message::<_, ControlMessage>(&mut rd).await? {
                let frame = session.tick(Some(&msg))?;
                write_message(&mut wr, &frame).await?;
            }
            Ok(())
        }
        TickMode::Realtime { hz } => {
            let mailbox: Arc<Mutex<Option<ControlMessage>>> = Arc::default();
            let closed = Arc::new(Notify::new());
            let reader = {
                let mailbox = mailbox.clone();
                let closed = closed.clone();
                tokio::spawn(async move {
                    let r = loop {
                        match read_message::<_, ControlMessage>(&mut rd).await {
                            Ok(Some(mut msg)) => {
                                let mut slot = mailbox.lock().expect("mailbox lock");
                                if let Some(old) = slot.take() {
                                    msg.absorb(old);
                                }
                                *slot = Some(msg);
                            }
                            Ok(None) => break Ok(()),
                            Err(e) => break Err(e),
                        }
                    };
                    closed.notify_one();
                    r
                })
            };
            let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / hz));
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                tokio::select! {
                    _ = closed.notified() => break,
                    _ = interval.tick() => {
                        let msg = mailbox.lock().expect("mailbox lock").take();
                        let frame = match session.tick(msg.as_ref()) {
                            Ok(f) => f,
                            Err(e) => {
                                reader.abort();
                                return Err(e);
                            }
                        };
                        if let Err(e) = write_message(&mut wr, &frame).await {
                            reader.abort();
                            return Err(e);
                        }
                    }
                }
            }
            reader.await.map_err(|e| TeleopError::Protocol(e.to_string()))?
        }
    }
}
