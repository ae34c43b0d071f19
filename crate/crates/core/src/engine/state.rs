use std::collections::HashMap;

use crate::analytic::{OccupancyVector, PartitionPlan};

use super::{CascadePolicy, EngineError, EventKind, EventRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    /// Admitted on the given 1-based partition.
    Admitted(usize),
    Denied,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InService {
    pub partition: usize,
    pub departure: f64,
}

/// Occupied ports per partition plus the registry of requests holding them.
#[derive(Debug, Clone)]
pub struct ServerState {
    occupancy: OccupancyVector,
    in_service: HashMap<u64, InService>,
}

impl ServerState {
    pub fn new(plan: &PartitionPlan) -> Self {
        Self {
            occupancy: OccupancyVector::empty(plan),
            in_service: HashMap::new(),
        }
    }

    pub fn occupancy(&self) -> &OccupancyVector {
        &self.occupancy
    }

    pub fn in_service(&self) -> &HashMap<u64, InService> {
        &self.in_service
    }

    pub fn free_ports(&self, plan: &PartitionPlan) -> u64 {
        plan.total_capacity() - self.occupancy.total()
    }

    /// Forwarding admission: scan partitions from the request's home in
    /// `policy` order and take a port on the first one with `Q_j < c_j`.
    /// The state is untouched on denial.
    pub fn admit(
        &mut self,
        request: &EventRecord,
        departure: f64,
        plan: &PartitionPlan,
        policy: CascadePolicy,
    ) -> Result<Admission, EngineError> {
        if request.kind != EventKind::Arrival {
            return Err(EngineError::ContractViolation(format!(
                "request {} offered for admission is not an arrival",
                request.request_id
            )));
        }
        plan.check_index(request.class_id)?;
        if self.in_service.contains_key(&request.request_id) {
            return Err(EngineError::ContractViolation(format!(
                "request {} is already in service",
                request.request_id
            )));
        }

        let capacities = plan.capacities();
        let chosen = policy
            .scan(request.class_id, plan.partition_count())
            .find(|&j| self.occupancy.get(j) < capacities[j - 1]);
        match chosen {
            Some(j) => {
                self.occupancy.increment(j);
                self.in_service.insert(
                    request.request_id,
                    InService {
                        partition: j,
                        departure,
                    },
                );
                Ok(Admission::Admitted(j))
            }
            None => Ok(Admission::Denied),
        }
    }

    /// Service completion: frees the port held by `request_id` and returns
    /// its partition.
    pub fn release(&mut self, request_id: u64) -> Result<usize, EngineError> {
        let entry = self
            .in_service
            .remove(&request_id)
            .ok_or(EngineError::UnknownRequest(request_id))?;
        self.occupancy.decrement(entry.partition);
        Ok(entry.partition)
    }

    /// Checks `0 <= Q_j <= c_j` and that `Q_j` matches the registry.
    pub fn check_invariants(&self, plan: &PartitionPlan) -> Result<(), String> {
        let mut counted = vec![0u32; plan.partition_count()];
        for entry in self.in_service.values() {
            counted[entry.partition - 1] += 1;
        }
        for (j, (&q, &c)) in self
            .occupancy
            .counts()
            .iter()
            .zip(plan.capacities())
            .enumerate()
        {
            if q > c {
                return Err(format!(
                    "partition {} occupancy {q} exceeds capacity {c}",
                    j + 1
                ));
            }
            if q != counted[j] {
                return Err(format!(
                    "partition {} occupancy {q} disagrees with {} registered requests",
                    j + 1,
                    counted[j]
                ));
            }
        }
        Ok(())
    }
}
