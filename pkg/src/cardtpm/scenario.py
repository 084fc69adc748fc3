"""Scripted multi-step scenarios against one or more emulated cards.

File format is line-oriented `key = value` with section headers:

    seed = 42

    [tpm A]
    state = a.tpm            # optional persistence backing

    [step bind]
    tpm = A
    mode = db                # db | tee
    timing = constant:600    # constant:X | bundled | file:PATH
    rounds = 1

    [step boot]
    tpm = A
    mode = both              # secure | measured | both

    [step join]
    tpm = A

    [step quote]
    tpm = A
    pcrs = 0,1
    bsn = service

    [step seal] / [step unseal] / [step duplicate] / [step power-cycle] /
    [step inject-fault]      # see _run_step below for their keys

Steps execute in order; the first failure stops the run and the exit
status reports the failing step.  Seeded runs are bit-reproducible: all
keys, nonces, latencies and signatures derive from the seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import apdu, binding, boot, certs, daa
from .apdu import ApduCommand
from .timing import TimingModel, bundled_rtm_samples, load_samples
from .tpm import (
    CardDispatcher,
    Policy,
    TpmState,
    selection_to_bitmap,
    send_payload,
    verify_quote,
)
from .tpm import dispatch as ins


class ScenarioError(Exception):
    pass


@dataclass
class Instance:
    name: str
    tpm: TpmState
    dispatcher: CardDispatcher
    state_path: Optional[Path] = None
    db_bound_this_cycle: bool = False
    log_mark: int = 0


@dataclass
class Lab:
    """Shared scenario environment: issuer, RTM identity, boot chain."""

    rng: random.Random
    chain: boot.BootChain
    identity: boot.RtmIdentity
    relay_delay_us: float = 0.0
    crs: Optional[daa.DaaPublicParams] = None
    issuer: Optional[daa.IssuerSecret] = None
    blobs: dict = field(default_factory=dict)
    keys: dict = field(default_factory=dict)       # (instance, name) -> handle
    approvals: dict = field(default_factory=dict)

    def ensure_issuer(self):
        if self.crs is None:
            self.crs, self.issuer = daa.daa_setup(128, self.rng)
        return self.crs, self.issuer


def _parse_scenario(path: Path):
    seed = None
    instances: list[tuple[str, dict]] = []
    steps: list[tuple[str, dict, int]] = []
    current: Optional[dict] = None
    for line_no, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            parts = line[1:-1].split()
            if len(parts) != 2 or parts[0] not in ("tpm", "step"):
                raise ScenarioError(f"{path}:{line_no}: bad section {line!r}")
            current = {}
            if parts[0] == "tpm":
                instances.append((parts[1], current))
            else:
                steps.append((parts[1], current, line_no))
            continue
        if "=" not in line:
            raise ScenarioError(f"{path}:{line_no}: expected key = value")
        key, _, value = (s.strip() for s in line.partition("="))
        if current is None:
            if key == "seed":
                seed = int(value)
            else:
                raise ScenarioError(f"{path}:{line_no}: unknown global key {key!r}")
        else:
            current[key] = value
    return seed, instances, steps


def _timing_from_spec(spec: str, base: Path) -> TimingModel:
    if spec.startswith("constant:"):
        return TimingModel.constant(float(spec.split(":", 1)[1]))
    if spec == "bundled":
        return TimingModel.empirical(bundled_rtm_samples())
    if spec.startswith("file:"):
        return TimingModel.empirical(load_samples(base / spec.split(":", 1)[1]))
    raise ScenarioError(f"unknown timing spec {spec!r}")


class _DispatchSink:
    """Measurement sink routing extends through the wire dispatcher."""

    def __init__(self, inst: Instance):
        self.inst = inst

    def extend_measurement(self, index: int, digest: bytes) -> None:
        resp = self.inst.dispatcher.handle(
            ApduCommand(cla=ins.CLA, ins=ins.INS_PCR_EXTEND, p1=index, data=digest)
        )
        if not resp.ok:
            raise RuntimeError(f"extend refused: {resp.status_word:#06x}")


class ScenarioRunner:
    def __init__(self, path, seed: Optional[int] = None, echo_hex: bool = False):
        self.path = Path(path)
        file_seed, instance_decls, self.steps = _parse_scenario(self.path)
        self.seed = seed if seed is not None else file_seed
        self.echo_hex = echo_hex
        self.rng = random.Random(self.seed) if self.seed is not None else random.Random()
        self.deterministic = self.seed is not None
        self.instances: dict[str, Instance] = {}
        for name, decl in instance_decls:
            # String seeds hash deterministically across processes.
            rng = random.Random(f"{self.seed}/{name}") if self.seed is not None else None
            state_path = self.path.parent / decl["state"] if "state" in decl else None
            if state_path and state_path.exists():
                tpm = TpmState.load(state_path, rng=rng)
            else:
                tpm = TpmState(rng=rng or random.Random())
            inst = Instance(name=name, tpm=tpm, dispatcher=CardDispatcher(tpm),
                            state_path=state_path)
            self.instances[name] = inst
        identity = boot.make_rtm_identity(b"scenario-board", self.rng,
                                          deterministic=self.deterministic)
        chain = boot.build_chain(
            {s: b"scn-image:" + s.value.encode() for s in boot.Stage}, self.rng
        )
        self.lab = Lab(rng=self.rng, chain=chain, identity=identity)
        self.clock_us = 1_000_000

    # -- helpers --------------------------------------------------------------

    def _inst(self, spec: dict, key: str = "tpm") -> Instance:
        name = spec.get(key)
        if name is None:
            raise ScenarioError(f"step needs `{key} = <instance>`")
        if name not in self.instances:
            raise ScenarioError(f"step references undeclared instance {name!r}")
        return self.instances[name]

    def _flush(self, inst: Instance, label: str):
        if self.echo_hex:
            for req, resp in inst.dispatcher.log[inst.log_mark:]:
                print(f"  [{inst.name}] >> {apdu.hex_dump(req)}")
                print(f"  [{inst.name}] << {apdu.hex_dump(resp)}")
        inst.log_mark = len(inst.dispatcher.log)

    def _inject_clock(self, inst: Instance, advance_us: int = 1000):
        self.clock_us += advance_us
        resp = inst.dispatcher.handle(ApduCommand(
            cla=ins.CLA, ins=ins.INS_CLOCK, data=self.clock_us.to_bytes(8, "big")
        ))
        if not resp.ok:
            raise ScenarioError("clock injection refused")

    def _save(self, inst: Instance):
        if inst.state_path:
            inst.tpm.save(inst.state_path)

    # -- steps ----------------------------------------------------------------

    def _step_bind(self, spec: dict) -> str:
        inst = self._inst(spec)
        mode = spec.get("mode", "db")
        inst.tpm.power_cycle()
        inst.db_bound_this_cycle = False
        resp = inst.dispatcher.handle(ApduCommand(
            cla=ins.CLA, ins=ins.INS_INIT, p1=1 if mode == "tee" else 0
        ))
        if not resp.ok:
            raise ScenarioError("init refused")
        if mode == "tee":
            signer = (certs.DeterministicSigner.generate(self.rng)
                      if self.deterministic else certs.FastSigner.generate(self.rng))
            cert = certs.test_vendor_ca().issue(b"scenario-device", signer.public_bytes())
            binding.TeeChannel(inst.dispatcher, signer, cert, self.rng)
            return "TEE channel established"
        timing = _timing_from_spec(spec.get("timing", "constant:600"), self.path.parent)
        if self.lab.relay_delay_us:
            timing = timing.with_relay(self.lab.relay_delay_us)
        rounds = int(spec.get("rounds", "1"))
        fraction = float(spec.get("fraction", "1.0" if rounds == 1 else "0.47"))
        cfg = binding.DistanceBoundingConfig(rounds=rounds, success_fraction=fraction)
        channel = binding.make_rtm_channel(self.lab.identity, self.lab.chain,
                                           timing, self.rng)
        outcome = binding.run_distance_bounding(
            inst.tpm, cfg, channel, self.lab.identity.certificate,
            self.lab.identity.public_bytes,
            start_time_us=self.clock_us,
        )
        self.clock_us += rounds * 2000
        if not outcome.bound:
            raise ScenarioError(
                f"binding rejected ({outcome.successes}/{outcome.rounds_played}): "
                f"{outcome.reason}")
        inst.db_bound_this_cycle = True
        return f"bound {outcome.successes}/{outcome.rounds_played}"

    def _step_boot(self, spec: dict) -> str:
        inst = self._inst(spec)
        mode = spec.get("mode", "both")
        notes = []
        if mode in ("secure", "both"):
            result = boot.secure_boot(self.lab.chain)
            if not result.success:
                raise ScenarioError(
                    f"secure boot aborted at {result.failed_stage.value}: {result.reason}")
            notes.append("secure OK")
        if mode in ("measured", "both"):
            sink = _DispatchSink(inst)
            measurements = boot.measured_boot(
                self.lab.chain, sink,
                skip_first=inst.db_bound_this_cycle,
            )
            unrecorded = [m for m in measurements if not m.recorded]
            if unrecorded:
                raise ScenarioError(
                    f"measurements unrecorded: {[m.stage.value for m in unrecorded]}")
            notes.append(f"measured {len(measurements)} stages")
        return ", ".join(notes)

    def _step_join(self, spec: dict) -> str:
        inst = self._inst(spec)
        crs, issuer = self.lab.ensure_issuer()
        request = inst.tpm.daa_join_begin(crs)
        wire_req = daa.encode_join_request(request)
        response = daa.issue(crs, issuer, daa.decode_join_request(wire_req), self.rng)
        wire_resp = daa.encode_join_response(response, request.pk_E)
        inst.tpm.daa_join_complete(daa.decode_join_response(wire_resp, request.pk_E))
        if self.echo_hex:
            print(f"  [join] request  {len(wire_req)} bytes")
            print(f"  [join] response {len(wire_resp)} bytes")
        return "credential installed"

    def _step_quote(self, spec: dict) -> str:
        inst = self._inst(spec)
        selection = tuple(int(x) for x in spec.get("pcrs", "0,1").split(","))
        bsn = spec["bsn"].encode() if "bsn" in spec else b""
        nonce = (bytes.fromhex(spec["nonce"]) if "nonce" in spec
                 else self.rng.randbytes(8))
        self._inject_clock(inst)
        payload = (selection_to_bitmap(selection) + nonce
                   + len(bsn).to_bytes(2, "big") + bsn)
        resp = inst.dispatcher.handle(ApduCommand(
            cla=ins.CLA, ins=ins.INS_QUOTE, data=payload
        ))
        if not resp.ok:
            raise ScenarioError(f"quote refused: {resp.status_word:#06x}")
        sig = daa.decode_signature(resp.data)
        reported = [inst.tpm.pcr_read(i) for i in sorted(selection)]
        crs, _ = self.lab.ensure_issuer()
        if not verify_quote(crs, selection, reported, nonce, bsn or None, sig):
            raise ScenarioError("quote did not verify")
        return "quote verified"

    def _step_seal(self, spec: dict) -> str:
        inst = self._inst(spec)
        data = bytes.fromhex(spec.get("data", "00112233"))
        policy = Policy()
        if "pcrs" in spec:
            policy = Policy(kind="pcr",
                            selection=tuple(int(x) for x in spec["pcrs"].split(",")))
        key_clause = ""
        if "key" in spec:
            key_name = spec["key"]
            handle = self.lab.keys.get((inst.name, key_name))
            if handle is None:
                resp = inst.dispatcher.handle(ApduCommand(
                    cla=ins.CLA, ins=ins.INS_CREATE_KEY, p1=1
                ))
                if not resp.ok:
                    raise ScenarioError("key creation refused")
                handle = int.from_bytes(resp.data[:4], "big")
                self.lab.keys[(inst.name, key_name)] = handle
            blob = inst.tpm.seal(data, policy, key_handle=handle)
            key_clause = f" under key {key_name}"
        else:
            payload = (len(policy.to_bytes()).to_bytes(2, "big") + policy.to_bytes()
                       + data)
            resp = send_payload(inst.dispatcher, ins.INS_SEAL, payload)
            if not resp.ok:
                raise ScenarioError(f"seal refused: {resp.status_word:#06x}")
            from .tpm import SealedBlob
            blob = SealedBlob.from_bytes(resp.data)
        blob_id = spec.get("id", "blob")
        self.lab.blobs[blob_id] = blob
        return f"sealed {len(data)} bytes as {blob_id!r}{key_clause}"

    def _step_unseal(self, spec: dict) -> str:
        inst = self._inst(spec)
        blob_id = spec.get("blob", "blob")
        blob = self.lab.blobs.get(blob_id)
        if blob is None:
            raise ScenarioError(f"unknown blob {blob_id!r}")
        payload = blob.to_bytes()
        resp = send_payload(inst.dispatcher, ins.INS_UNSEAL,
                            len(payload).to_bytes(2, "big") + payload)
        if not resp.ok:
            raise ScenarioError(f"unseal refused: {resp.status_word:#06x}")
        if "expect" in spec and resp.data != bytes.fromhex(spec["expect"]):
            raise ScenarioError("unsealed data does not match expectation")
        return f"unsealed {len(resp.data)} bytes"

    def _step_duplicate(self, spec: dict) -> str:
        src = self._inst(spec, "from")
        dst = self._inst(spec, "to")
        key_name = spec.get("key", "key")
        handle = self.lab.keys.get((src.name, key_name))
        if handle is None:
            raise ScenarioError(f"unknown key {key_name!r} on {src.name}")
        payload = handle.to_bytes(4, "big") + dst.tpm.srk_public
        resp = src.dispatcher.handle(ApduCommand(
            cla=ins.CLA, ins=ins.INS_DUPLICATE, data=payload
        ))
        if not resp.ok:
            raise ScenarioError(f"duplicate refused: {resp.status_word:#06x}")
        resp2 = send_payload(dst.dispatcher, ins.INS_IMPORT, resp.data)
        if not resp2.ok:
            raise ScenarioError(f"import refused: {resp2.status_word:#06x}")
        new_handle = int.from_bytes(resp2.data, "big")
        self.lab.keys[(dst.name, key_name)] = new_handle
        return f"key {key_name!r} migrated {src.name} -> {dst.name}"

    def _step_power_cycle(self, spec: dict) -> str:
        inst = self._inst(spec)
        self._save(inst)
        inst.tpm.power_cycle()
        inst.db_bound_this_cycle = False
        return "power cycled"

    def _step_inject_fault(self, spec: dict) -> str:
        target = spec.get("target")
        if target == "chain":
            import dataclasses
            stage = boot.Stage(spec.get("stage", "BL2"))
            images = tuple(
                dataclasses.replace(img, payload=img.payload + b"\xee")
                if img.stage is stage else img
                for img in self.lab.chain.images
            )
            self.lab.chain = dataclasses.replace(self.lab.chain, images=images)
            return f"tampered {stage.value} payload"
        if target == "relay":
            self.lab.relay_delay_us = float(spec.get("delay_us", "200"))
            return f"relay delay {self.lab.relay_delay_us} us armed"
        if target == "blob":
            blob_id = spec.get("blob", "blob")
            blob = self.lab.blobs.get(blob_id)
            if blob is None:
                raise ScenarioError(f"unknown blob {blob_id!r}")
            import dataclasses
            ct = bytearray(blob.ciphertext)
            ct[0] ^= 1
            self.lab.blobs[blob_id] = dataclasses.replace(blob, ciphertext=bytes(ct))
            return f"corrupted blob {blob_id!r}"
        raise ScenarioError(f"unknown fault target {target!r}")

    # -- driver -----------------------------------------------------------------

    def run(self) -> int:
        handlers = {
            "bind": self._step_bind,
            "boot": self._step_boot,
            "join": self._step_join,
            "quote": self._step_quote,
            "seal": self._step_seal,
            "unseal": self._step_unseal,
            "duplicate": self._step_duplicate,
            "power-cycle": self._step_power_cycle,
            "inject-fault": self._step_inject_fault,
        }
        for index, (kind, spec, line_no) in enumerate(self.steps, 1):
            handler = handlers.get(kind)
            if handler is None:
                print(f"step {index}: unknown step type {kind!r} (line {line_no})")
                return 1
            try:
                note = handler(spec)
            except Exception as exc:
                print(f"step {index}: {kind}: FAIL: {exc}")
                return 1
            finally:
                for inst in self.instances.values():
                    self._flush(inst, kind)
            print(f"step {index}: {kind}: ok ({note})")
        for inst in self.instances.values():
            self._save(inst)
        return 0


def run_scenario_file(path, seed: Optional[int] = None, echo_hex: bool = False) -> int:
    return ScenarioRunner(path, seed=seed, echo_hex=echo_hex).run()
