//! Instrumented bounded SPSC queue.
//!
//! Each end keeps a count of successful (non-blocking) transactions and a
//! sticky "blocked" flag. A monitor harvests both with an atomic exchange, so
//! neither the producer nor the consumer ever waits on it. An increment that
//! races a harvest is attributed to one of the two adjacent periods, never
//! lost or counted twice.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cell::UnsafeCell;
use core::mem::MaybeUninit;
use core::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};

use crate::{Error, Result};

/// Which end of the queue a counter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Side {
    /// Departures: reads by the consumer.
    #[default]
    Head,
    /// Arrivals: writes by the producer.
    Tail,
}

/// Counts harvested from one queue over one sampling period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TransactionSnapshot {
    pub period_index: u64,
    pub tc_head: u64,
    pub tc_tail: u64,
    pub head_blocked: bool,
    pub tail_blocked: bool,
    pub realized_period_ns: u64,
    /// Time-reference reading at harvest.
    pub timestamp_ns: u64,
}

impl TransactionSnapshot {
    pub fn count(&self, side: Side) -> u64 {
        match side {
            Side::Head => self.tc_head,
            Side::Tail => self.tc_tail,
        }
    }

    pub fn blocked(&self, side: Side) -> bool {
        match side {
            Side::Head => self.head_blocked,
            Side::Tail => self.tail_blocked,
        }
    }
}

/// Harvest of one end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideHarvest {
    pub count: u64,
    pub blocked: bool,
}

#[repr(align(64))]
struct Padded<T>(T);

struct EndStats {
    count: AtomicU64,
    blocked: AtomicBool,
}

impl EndStats {
    const fn new() -> Self {
        Self {
            count: AtomicU64::new(0),
            blocked: AtomicBool::new(false),
        }
    }

    fn harvest(&self) -> SideHarvest {
        SideHarvest {
            count: self.count.swap(0, Ordering::Relaxed),
            blocked: self.blocked.swap(false, Ordering::Relaxed),
        }
    }
}

struct Inner<T> {
    buffer: Box<[UnsafeCell<MaybeUninit<T>>]>,
    mask: usize,
    item_size: usize,
    // next slot to read
    head: Padded<AtomicUsize>,
    // next slot to write
    tail: Padded<AtomicUsize>,
    head_stats: Padded<EndStats>,
    tail_stats: Padded<EndStats>,
}

// Slots are only touched by the single producer (before publishing `tail`)
// or the single consumer (before publishing `head`).
unsafe impl<T: Send> Send for Inner<T> {}
unsafe impl<T: Send> Sync for Inner<T> {}

impl<T> Inner<T> {
    fn capacity(&self) -> usize {
        self.mask + 1
    }

    fn occupancy(&self) -> usize {
        let tail = self.tail.0.load(Ordering::Acquire);
        let head = self.head.0.load(Ordering::Acquire);
        tail.wrapping_sub(head)
    }

    fn stats(&self, side: Side) -> &EndStats {
        match side {
            Side::Head => &self.head_stats.0,
            Side::Tail => &self.tail_stats.0,
        }
    }
}

impl<T> Drop for Inner<T> {
    fn drop(&mut self) {
        let mut head = *self.head.0.get_mut();
        let tail = *self.tail.0.get_mut();
        while head != tail {
            unsafe { self.buffer[head & self.mask].get_mut().assume_init_drop() };
            head = head.wrapping_add(1);
        }
    }
}

/// Builder for an instrumented queue. Capacity is rounded up to a power of two.
pub struct IQueue;

impl IQueue {
    /// Creates a queue whose items are `size_of::<T>()` bytes for rate purposes.
    pub fn new<T: Send>(capacity: usize) -> Result<(Producer<T>, Consumer<T>, QueueTap<T>)> {
        Self::with_item_size(capacity, core::mem::size_of::<T>().max(1))
    }

    /// Creates a queue reporting `item_size` bytes per item (`d`).
    pub fn with_item_size<T: Send>(
        capacity: usize,
        item_size: usize,
    ) -> Result<(Producer<T>, Consumer<T>, QueueTap<T>)> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("queue capacity must be >= 1"));
        }
        if item_size == 0 {
            return Err(Error::InvalidArgument("item size must be >= 1"));
        }
        let cap = capacity
            .checked_next_power_of_two()
            .ok_or(Error::InvalidArgument("queue capacity too large"))?;
        let buffer = (0..cap)
            .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
            .collect::<Vec<_>>()
            .into_boxed_slice();
        let inner = Arc::new(Inner {
            buffer,
            mask: cap - 1,
            item_size,
            head: Padded(AtomicUsize::new(0)),
            tail: Padded(AtomicUsize::new(0)),
            head_stats: Padded(EndStats::new()),
            tail_stats: Padded(EndStats::new()),
        });
        Ok((
            Producer {
                inner: inner.clone(),
            },
            Consumer {
                inner: inner.clone(),
            },
            QueueTap { inner },
        ))
    }
}

/// Write end. Not `Clone`: there is exactly one producer.
pub struct Producer<T> {
    inner: Arc<Inner<T>>,
}

impl<T> Producer<T> {
    /// Enqueues `item` if there is room, counting a non-blocking write.
    /// On a full queue the item is handed back and the tail is marked blocked.
    #[inline]
    pub fn try_push(&mut self, item: T) -> core::result::Result<(), T> {
        let q = &*self.inner;
        let tail = q.tail.0.load(Ordering::Relaxed);
        let head = q.head.0.load(Ordering::Acquire);
        if tail.wrapping_sub(head) == q.capacity() {
            q.tail_stats.0.blocked.store(true, Ordering::Relaxed);
            return Err(item);
        }
        unsafe { (*q.buffer[tail & q.mask].get()).write(item) };
        q.tail.0.store(tail.wrapping_add(1), Ordering::Release);
        q.tail_stats.0.count.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    pub fn len(&self) -> usize {
        self.inner.occupancy()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Read end. Not `Clone`: there is exactly one consumer.
pub struct Consumer<T> {
    inner: Arc<Inner<T>>,
}

impl<T> Consumer<T> {
    /// Dequeues the oldest item, counting a non-blocking read.
    /// On an empty queue returns `None` and marks the head blocked.
    #[inline]
    pub fn try_pop(&mut self) -> Option<T> {
        let q = &*self.inner;
        let head = q.head.0.load(Ordering::Relaxed);
        let tail = q.tail.0.load(Ordering::Acquire);
        if head == tail {
            q.head_stats.0.blocked.store(true, Ordering::Relaxed);
            return None;
        }
        let item = unsafe { (*q.buffer[head & q.mask].get()).assume_init_read() };
        q.head.0.store(head.wrapping_add(1), Ordering::Release);
        q.head_stats.0.count.fetch_add(1, Ordering::Relaxed);
        Some(item)
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    pub fn len(&self) -> usize {
        self.inner.occupancy()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Monitor-side view: reads and zeroes the counters and blocked flags.
pub struct QueueTap<T> {
    inner: Arc<Inner<T>>,
}

impl<T> Clone for QueueTap<T> {
    fn clone(&self) -> Self {
        Self {
            inner: self.inner.clone(),
        }
    }
}

impl<T> QueueTap<T> {
    /// Copies and zeroes the counter of one end, and clears its blocked flag.
    pub fn harvest(&self, side: Side) -> SideHarvest {
        self.inner.stats(side).harvest()
    }

    /// Harvests both ends into a snapshot.
    pub fn snapshot(
        &self,
        period_index: u64,
        realized_period_ns: u64,
        timestamp_ns: u64,
    ) -> TransactionSnapshot {
        let head = self.harvest(Side::Head);
        let tail = self.harvest(Side::Tail);
        TransactionSnapshot {
            period_index,
            tc_head: head.count,
            tc_tail: tail.count,
            head_blocked: head.blocked,
            tail_blocked: tail.blocked,
            realized_period_ns,
            timestamp_ns,
        }
    }

    /// Current (unharvested) count of one end.
    pub fn counter(&self, side: Side) -> u64 {
        self.inner.stats(side).count.load(Ordering::Relaxed)
    }

    pub fn is_blocked(&self, side: Side) -> bool {
        self.inner.stats(side).blocked.load(Ordering::Relaxed)
    }

    pub fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    /// Bytes per item (`d`).
    pub fn item_size(&self) -> usize {
        self.inner.item_size
    }

    pub fn len(&self) -> usize {
        self.inner.occupancy()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
