use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::{self, JoinHandle};

/// Items produced on a background thread and consumed in FIFO order, with
/// at most `capacity` finished items not yet taken by the consumer.
pub struct Prefetcher<T> {
    rx: Option<Receiver<T>>,
    handle: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetcher<T> {
    /// Calls `produce(0)`, `produce(1)`, … until it returns `None` or the
    /// consumer is dropped.
    pub fn spawn<F>(capacity: usize, mut produce: F) -> Self
    where
        F: FnMut(usize) -> Option<T> + Send + 'static,
    {
        // the producer holds one finished item while blocked in `send`
        let (tx, rx) = sync_channel(capacity.max(1) - 1);
        let handle = thread::spawn(move || {
            let mut i = 0;
            while let Some(item) = produce(i) {
                if tx.send(item).is_err() {
                    break;
                }
                i += 1;
            }
        });
        Prefetcher {
            rx: Some(rx),
            handle: Some(handle),
        }
    }
}

impl<T> Iterator for Prefetcher<T> {
    type Item = T;

    fn next(&mut self) -> Option<T> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl<T> Drop for Prefetcher<T> {
    fn drop(&mut self) {
        // closing the receiver unblocks a pending send
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
