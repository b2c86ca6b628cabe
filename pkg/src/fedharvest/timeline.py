"""Slot-driven federated simulation loop.

Time is a flat slot counter s in [0, S*T); epoch t = s // S. Every slot runs
the same phase sequence, in this order:

  1. every client draws one harvest (even while busy training)
  2. busy clients advance one minibatch; the final batch seals the upload
     message and the feature summary
  3. idle clients holding a sealed message pay 1 unit and upload it
  4. on the first slot of an epoch: broadcast to idle clients, fix this
     round's cohort (age-ranked pick or baseline rule), then probe every
     client and advance all ages
  5. eligible idle clients that can pay kappa start training; the first
     batch runs in the start slot itself
  6. on the last slot of an epoch: aggregate the inbox into the global
     model and append the epoch's metrics row

A client never uploads and starts training in the same slot; training spans
kappa consecutive slots ending the slot before the client is free again.
All randomness flows from one root seed through fixed-purpose substreams
(model init, pool, partition, probes, selection fallback, then one harvest
and one data stream per client), so runs with equal config and seed are
bit-identical, and harvest traces are unaffected by policy or data settings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import Config
from .datagen import (
    BatchStream,
    Dataset,
    PartitionSpec,
    dirichlet_partition,
    generate_pool,
    split_pool,
)
from .energy import Battery, HarvestProcess, harvest, try_start_training, try_transmit
from .learner import (
    Minibatch,
    MLPParams,
    aggregate,
    batch_train,
    finalize_training,
)
from .metrics import EnergyLedger, EpochMetrics, evaluate
from .scheduler import Policy, VaoiPolicy, make_policy
from .semantics import advance_ages, probe_change


@dataclass
class Message:
    """One sealed local update awaiting upload and aggregation."""

    client_id: int
    params: MLPParams
    n_samples: int
    features: np.ndarray
    train_epoch: int


@dataclass
class ClientRuntime:
    cid: int
    battery: Battery
    harvester: HarvestProcess
    stream: BatchStream
    probe: Minibatch
    local_model: MLPParams
    pending: Message | None = None
    busy_until: int | None = None
    batches_done: int = 0
    feature_sums: list[np.ndarray] = field(default_factory=list)
    samples_seen: int = 0
    last_train_epoch: int | None = None

    def busy(self, slot: int) -> bool:
        return self.busy_until is not None and slot < self.busy_until


@dataclass
class RunArtifacts:
    config: Config
    rows: list[EpochMetrics]
    final_model: MLPParams
    final_ages: np.ndarray


class SimulationRun:
    """Mutable state of one seeded run; step_slot drives it one slot forward."""

    def __init__(self, config: Config) -> None:
        config.validate()
        self.config = config
        n = config.clients
        root = np.random.SeedSequence(config.seed)
        children = root.spawn(5 + 2 * n)
        rng_init, rng_pool, rng_part, rng_probe, sched_seq = children[:5]
        harvest_seqs = children[5 : 5 + n]
        data_seqs = children[5 + n : 5 + 2 * n]

        pool = generate_pool(
            config.num_classes,
            config.d_in,
            config.pool_per_class + config.test_per_class,
            config.class_spread,
            np.random.default_rng(rng_pool),
        )
        train_pool, self.test = split_pool(pool, config.test_per_class)
        parts = dirichlet_partition(
            train_pool,
            PartitionSpec(config.alpha, n, config.samples_per_client),
            np.random.default_rng(rng_part),
        )

        probe_rng = np.random.default_rng(rng_probe)
        self.clients: list[ClientRuntime] = []
        for cid, part in enumerate(parts):
            pick = probe_rng.choice(part.n, size=config.batch_size, replace=False)
            self.clients.append(
                ClientRuntime(
                    cid=cid,
                    battery=Battery(config.e_init, config.e_max),
                    harvester=HarvestProcess(
                        config.p_bc, np.random.default_rng(harvest_seqs[cid])
                    ),
                    stream=BatchStream(
                        part, config.batch_size, np.random.default_rng(data_seqs[cid])
                    ),
                    probe=Minibatch(part.inputs[pick], part.labels[pick]),
                    local_model=MLPParams.zeros(config.layer_sizes),
                )
            )

        # zero start is faithful to the update rule but stalls hidden ReLU
        # layers, so the default is a small symmetric uniform init
        if config.zero_init:
            self.global_model = MLPParams.zeros(config.layer_sizes)
        else:
            self.global_model = MLPParams.uniform(
                config.layer_sizes, np.random.default_rng(rng_init)
            )
        self.policy: Policy = make_policy(
            config.policy,
            k=config.k,
            groups=config.groups,
            start_offset=max(config.start_offset, 0),
            proportional=config.proportional,
        )
        self.sched_rng = np.random.default_rng(sched_seq)

        self.ages = np.zeros(n, dtype=np.int64)
        self.server_features: list[np.ndarray | None] = [None] * n
        self.last_aggregated = np.full(n, -1, dtype=np.int64)
        self.prev_aggregated = np.zeros(n, dtype=bool)
        self.eligible = np.zeros(n, dtype=bool)
        self.inbox: list[Message] = []
        self.ledger = EnergyLedger(config.kappa)
        self.rows: list[EpochMetrics] = []
        self.slot = 0

    def _advance_batch(self, client: ClientRuntime, epoch: int) -> None:
        cfg = self.config
        batch = client.stream.next_batch()
        client.local_model, fsum, _ = batch_train(
            client.local_model, batch, cfg.gamma, cfg.feature_layer
        )
        client.feature_sums.append(fsum)
        client.samples_seen += len(batch)
        client.batches_done += 1
        if client.batches_done == cfg.kappa:
            features = finalize_training(
                client.feature_sums, client.samples_seen, cfg.kappa
            )
            client.pending = Message(
                client.cid,
                client.local_model.copy(),
                client.samples_seen,
                features,
                epoch,
            )
            client.feature_sums = []

    def step_slot(self) -> None:
        cfg = self.config
        s = self.slot
        if s >= cfg.slots_per_epoch * cfg.epochs:
            raise RuntimeError("run already complete")
        epoch, offset = divmod(s, cfg.slots_per_epoch)

        for client in self.clients:
            harvest(client.battery, client.harvester)

        for client in self.clients:
            if client.busy(s):
                self._advance_batch(client, epoch)

        uploaded = np.zeros(cfg.clients, dtype=bool)
        for client in self.clients:
            if client.busy(s) or client.pending is None:
                continue
            if try_transmit(client.battery):
                self.inbox.append(client.pending)
                client.pending = None
                uploaded[client.cid] = True
                self.ledger.record_transmission()

        if offset == 0:
            for client in self.clients:
                if not client.busy(s):
                    client.local_model = self.global_model.copy()
            if isinstance(self.policy, VaoiPolicy):
                chosen = self.policy.select(
                    self.ages, self.last_aggregated, self.sched_rng
                )
                self.eligible = np.zeros(cfg.clients, dtype=bool)
                self.eligible[chosen] = True
                reset = self.eligible
            else:
                self.eligible = self.policy.eligible_mask(epoch, cfg.clients)
                reset = self.prev_aggregated
            informative = np.array(
                [
                    probe_change(
                        self.global_model,
                        client.probe,
                        self.server_features[client.cid],
                        cfg.feature_layer,
                    )
                    >= cfg.mu
                    for client in self.clients
                ]
            )
            self.ages = advance_ages(self.ages, informative, reset)

        for client in self.clients:
            if client.busy(s) or client.pending is not None or uploaded[client.cid]:
                continue
            if not self.eligible[client.cid]:
                continue
            able = client.battery.level >= cfg.kappa
            if self.policy.decide_start(client.cid, offset, able):
                granted = try_start_training(client.battery, cfg.kappa)
                if not granted:
                    raise RuntimeError("start granted by policy but denied by battery")
                self.ledger.record_training()
                if self.policy.consume_eligibility:
                    self.eligible[client.cid] = False
                client.busy_until = s + cfg.kappa
                client.batches_done = 0
                client.feature_sums = []
                client.samples_seen = 0
                client.last_train_epoch = epoch
                self._advance_batch(client, epoch)

        if offset == cfg.slots_per_epoch - 1:
            agg_mask = np.zeros(cfg.clients, dtype=bool)
            participants = len(self.inbox)
            if self.inbox:
                self.global_model = aggregate(
                    [(m.params, m.n_samples) for m in self.inbox]
                )
                for m in self.inbox:
                    self.server_features[m.client_id] = m.features
                    self.last_aggregated[m.client_id] = epoch
                    agg_mask[m.client_id] = True
                self.inbox = []
            self.prev_aggregated = agg_mask
            self.rows.append(
                EpochMetrics(
                    epoch=epoch,
                    macro_f1=evaluate(self.global_model, self.test),
                    mean_vaoi=float(self.ages.mean()),
                    cum_energy=self.ledger.cum_energy,
                    trainings_started=self.ledger.trainings,
                    transmissions=self.ledger.transmissions,
                    participants=participants,
                )
            )

        self.slot += 1


def run_to_completion(config: Config) -> RunArtifacts:
    """Execute all S*T slots; identical (config, seed) gives identical output."""
    run = SimulationRun(config)
    total = config.slots_per_epoch * config.epochs
    for _ in range(total):
        run.step_slot()
    return RunArtifacts(
        config=config,
        rows=run.rows,
        final_model=run.global_model,
        final_ages=run.ages.copy(),
    )
