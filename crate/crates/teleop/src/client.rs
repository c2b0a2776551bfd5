//! Minimal protocol client, used by scripted drivers and tests.

use tokio::net::{TcpStream, ToSocketAddrs};

use crate::protocol::{read_message, write_message, ControlMessage, FrameMessage, Handshake, PROTO_VERSION};
use crate::TeleopError;

pub struct TeleopClient {
    stream: TcpStream,
    pub handshake: Handshake,
}

impl TeleopClient {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<TeleopClient, TeleopError> {
        let mut stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let handshake: Handshake =
            read_message(&mut stream).await?.ok_or_else(|| TeleopError::Protocol("closed before handshake".into()))?;
        if handshake.proto != PROTO_VERSION {
            return Err(TeleopError::Protocol(format!("server speaks protocol {}", handshake.proto)));
        }
        Ok(TeleopClient { stream, handshake })
    }

    pub async fn send(&mut self, msg: &ControlMessage) -> Result<(), TeleopError> {
        write_message(&mut self.stream, msg).await
    }

    /// Next frame, or `None` once the server has closed the connection.
    pub async fn recv(&mut self) -> Result<Option<FrameMessage>, TeleopError> {
        read_message(&mut self.stream).await
    }

    /// Sends a message and waits for the frame it produces (lockstep servers).
    pub async fn step(&mut self, msg: &ControlMessage) -> Result<FrameMessage, TeleopError> {
        self.send(msg).await?;
        self.recv().await?.ok_or_else(|| TeleopError::Protocol("server closed the connection".into()))
    }

    /// Raw access for sending arbitrary bytes.
    pub fn stream_mut(&mut self) -> &mut TcpStream {
        &mut self.stream
    }
}
