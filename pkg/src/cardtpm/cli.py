"""Command-line front end for the emulator.

One invocation is one power-on session of the emulated card backed by a
persistence file (``--state``).  Commands travel through the APDU
dispatcher, so ``--hex`` can echo every wire frame.  ``--seed`` makes runs
bit-reproducible (deterministic keys, nonces, signatures and latencies).

Gated commands (extend, seal, unseal, quote) legitimately require an RTM
binding, which is volatile.  One-shot invocations therefore perform an
implicit simulated local binding first, unless ``--no-auto-bind`` is given;
scenario files script the binding explicitly instead.

Exit codes: 0 success, 1 command/step failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import random
import secrets
import statistics
import sys
import time
from pathlib import Path

from . import apdu, binding, boot, certs, daa
from .apdu import ApduCommand
from .timing import TimingModel, bundled_rtm_samples, load_samples
from .tpm import (
    CardDispatcher,
    DigestApproval,
    Policy,
    SealedBlob,
    DuplicationBlob,
    TpmState,
    selection_to_bitmap,
    send_payload,
    verify_quote,
)
from .tpm import dispatch as ins


class CliError(Exception):
    pass


class Context:
    """Shared per-invocation state: RNG, card, dispatcher, transcript."""

    def __init__(self, args):
        self.args = args
        self.seeded = args.seed is not None
        self.rng = random.Random(args.seed) if self.seeded else secrets.SystemRandom()
        self.state_path = Path(args.state) if args.state else None
        if self.state_path and self.state_path.exists():
            self.tpm = TpmState.load(self.state_path, rng=self.rng)
        else:
            self.tpm = TpmState(rng=self.rng)
        self.dispatcher = CardDispatcher(self.tpm)
        self._log_mark = 0

    def new_signer(self):
        return (certs.DeterministicSigner.generate(self.rng) if self.seeded
                else certs.FastSigner.generate(self.rng))

    def save(self):
        if self.state_path:
            self.tpm.save(self.state_path)

    def flush_transcript(self, label: str = ""):
        if not self.args.hex:
            self._log_mark = len(self.dispatcher.log)
            return
        for req, resp in self.dispatcher.log[self._log_mark:]:
            prefix = f"[{label}] " if label else ""
            print(f"{prefix}>> {apdu.hex_dump(req)}")
            print(f"{prefix}<< {apdu.hex_dump(resp)}")
        self._log_mark = len(self.dispatcher.log)

    # -- card plumbing -------------------------------------------------------

    def send(self, command: ApduCommand) -> apdu.ApduResponse:
        resp = apdu.decode_response(self.dispatcher.handle_bytes(apdu.encode_command(command)))
        return resp

    def send_ok(self, command: ApduCommand, what: str) -> apdu.ApduResponse:
        resp = self.send(command)
        if not resp.ok:
            raise CliError(f"{what}: {sw_name(resp.status_word)}")
        return resp

    def send_payload_ok(self, ins_byte: int, payload: bytes, what: str, p1: int = 0):
        resp = send_payload(self.dispatcher, ins_byte, payload, p1=p1)
        if not resp.ok:
            raise CliError(f"{what}: {sw_name(resp.status_word)}")
        return resp

    def ensure_init(self, mode: str = "db"):
        if not self.tpm.initialized_this_cycle:
            self.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_INIT,
                                     p1=1 if mode == "tee" else 0), "init")

    def auto_bind(self):
        """Implicit simulated local binding for one-shot gated commands."""
        if not self.tpm.hierarchies_locked:
            return
        if self.args.no_auto_bind:
            raise CliError("hierarchies locked (run a bind, or drop --no-auto-bind)")
        self.ensure_init()
        identity, chain = default_rtm(self.rng, deterministic=self.seeded)
        cfg = binding.DistanceBoundingConfig(rounds=1, success_fraction=1.0)
        channel = binding.make_rtm_channel(identity, chain, TimingModel.constant(600), self.rng)
        outcome = binding.run_distance_bounding(
            self.tpm, cfg, channel, identity.certificate, identity.public_bytes
        )
        if not outcome.bound:
            raise CliError(f"implicit binding failed: {outcome.reason}")
        print("note: implicit simulated RTM binding performed", file=sys.stderr)


def sw_name(sw: int) -> str:
    return apdu.SW_NAMES.get(sw, f"status {sw:#06x}")


def default_rtm(rng, deterministic=False):
    identity = boot.make_rtm_identity(b"cli-board", rng, deterministic=deterministic)
    chain = boot.build_chain(
        {s: b"cli-image:" + s.value.encode() for s in boot.Stage}, rng
    )
    return identity, chain


def parse_hex_arg(text: str, what: str) -> bytes:
    try:
        return bytes.fromhex(text.replace(" ", ""))
    except ValueError:
        raise CliError(f"{what}: not valid hex: {text!r}") from None


def parse_pcr_list(text: str) -> tuple[int, ...]:
    try:
        sel = tuple(sorted({int(x) for x in text.split(",") if x.strip() != ""}))
    except ValueError:
        raise CliError(f"bad PCR list: {text!r}") from None
    if not sel or any(not 0 <= i < 24 for i in sel):
        raise CliError(f"PCR indices must be 0..23: {text!r}")
    return sel


# ---------------------------------------------------------------------------
# Simple card commands.


def cmd_init(ctx: Context) -> int:
    ctx.tpm.power_cycle()
    ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_INIT,
                            p1=1 if ctx.args.mode == "tee" else 0), "init")
    ctx.save()
    ctx.flush_transcript("init")
    print(f"initialized (mode={ctx.args.mode}); srk={ctx.tpm.srk_public.hex()[:16]}...")
    return 0


def cmd_extend(ctx: Context) -> int:
    digest = parse_hex_arg(ctx.args.data, "--data")
    if len(digest) != 32:
        raise CliError(f"extend needs a 32-byte digest, got {len(digest)}")
    ctx.ensure_init()
    ctx.auto_bind()
    resp = ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_PCR_EXTEND,
                                   p1=ctx.args.index, data=digest), "extend")
    ctx.save()
    ctx.flush_transcript("extend")
    print(resp.data.hex())
    return 0


def cmd_read(ctx: Context) -> int:
    ctx.ensure_init()
    resp = ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_PCR_READ,
                                   p1=ctx.args.index), "read")
    ctx.flush_transcript("read")
    print(resp.data.hex())
    return 0


def _policy_from_args(args) -> Policy:
    if args.pcrs and args.authority:
        raise CliError("choose either --pcrs or --authority, not both")
    if args.pcrs:
        return Policy(kind="pcr", selection=parse_pcr_list(args.pcrs))
    if args.authority:
        pub = parse_hex_arg(args.authority, "--authority")
        return Policy(kind="authorized", selection=parse_pcr_list(args.authority_pcrs),
                      authority_public=pub)
    return Policy()


def cmd_seal(ctx: Context) -> int:
    data = (Path(ctx.args.infile).read_bytes() if ctx.args.infile
            else parse_hex_arg(ctx.args.data, "--data"))
    ctx.ensure_init()
    ctx.auto_bind()
    policy = _policy_from_args(ctx.args)
    payload = len(policy.to_bytes()).to_bytes(2, "big") + policy.to_bytes() + data
    resp = ctx.send_payload_ok(ins.INS_SEAL, payload, "seal")
    ctx.save()
    ctx.flush_transcript("seal")
    if ctx.args.out:
        Path(ctx.args.out).write_bytes(resp.data)
        print(f"sealed {len(data)} bytes -> {ctx.args.out} ({len(resp.data)} bytes)")
    else:
        print(resp.data.hex())
    return 0


def cmd_unseal(ctx: Context) -> int:
    blob = (Path(ctx.args.blob).read_bytes() if Path(ctx.args.blob).exists()
            else parse_hex_arg(ctx.args.blob, "--blob"))
    ctx.ensure_init()
    ctx.auto_bind()
    payload = len(blob).to_bytes(2, "big") + blob
    if ctx.args.approval:
        approval = Path(ctx.args.approval).read_bytes()
        payload += len(approval).to_bytes(2, "big") + approval
    resp = ctx.send_payload_ok(ins.INS_UNSEAL, payload, "unseal")
    ctx.flush_transcript("unseal")
    if ctx.args.out:
        Path(ctx.args.out).write_bytes(resp.data)
        print(f"unsealed {len(resp.data)} bytes -> {ctx.args.out}")
    else:
        print(resp.data.hex())
    return 0


def cmd_key(ctx: Context) -> int:
    ctx.ensure_init()
    action = ctx.args.key_action
    if action == "create":
        p1 = (1 if ctx.args.duplicable else 0) | (2 if ctx.args.attestation else 0)
        resp = ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_CREATE_KEY, p1=p1),
                           "key create")
        handle = int.from_bytes(resp.data[:4], "big")
        ctx.save()
        ctx.flush_transcript("key")
        print(f"handle {handle:#010x}")
        print(f"public {resp.data[4:].hex()}")
        return 0
    if action == "duplicate":
        parent = parse_hex_arg(ctx.args.parent_public, "--parent-public")
        payload = ctx.args.handle.to_bytes(4, "big") + parent
        resp = ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_DUPLICATE, data=payload),
                           "key duplicate")
        ctx.flush_transcript("key")
        if ctx.args.out:
            Path(ctx.args.out).write_bytes(resp.data)
            print(f"duplication blob -> {ctx.args.out}")
        else:
            print(resp.data.hex())
        return 0
    if action == "import":
        blob = Path(ctx.args.blob).read_bytes()
        resp = ctx.send_payload_ok(ins.INS_IMPORT, blob, "key import")
        ctx.save()
        ctx.flush_transcript("key")
        print(f"handle {int.from_bytes(resp.data, 'big'):#010x}")
        return 0
    raise CliError(f"unknown key action {action!r}")


def cmd_quote(ctx: Context) -> int:
    ctx.ensure_init()
    ctx.auto_bind()
    if ctx.tpm.daa_state is None:
        raise CliError("no attestation credential on card; run `daa join` first")
    selection = parse_pcr_list(ctx.args.pcrs)
    nonce = parse_hex_arg(ctx.args.nonce, "--nonce")
    if len(nonce) != 8:
        raise CliError("quote nonce must be 8 bytes")
    bsn = ctx.args.bsn.encode() if ctx.args.bsn else b""
    ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_CLOCK,
                            data=int(time.time_ns() // 1000 if not ctx.seeded else 10_000_000).to_bytes(8, "big")),
                "clock")
    payload = selection_to_bitmap(selection) + nonce + len(bsn).to_bytes(2, "big") + bsn
    resp = ctx.send_ok(ApduCommand(cla=ins.CLA, ins=ins.INS_QUOTE, data=payload), "quote")
    ctx.save()
    ctx.flush_transcript("quote")
    print(resp.data.hex())
    return 0


# ---------------------------------------------------------------------------
# DAA commands.


def cmd_daa(ctx: Context) -> int:
    action = ctx.args.daa_action
    if action == "setup":
        crs, issuer_secret = daa.daa_setup(128, ctx.rng)
        Path(ctx.args.crs).write_bytes(crs.gpk1.to_bytes() + crs.gpk2.to_bytes())
        Path(ctx.args.issuer_secret).write_bytes(issuer_secret.sk_iss.to_bytes())
        print(f"crs -> {ctx.args.crs}; issuer secret -> {ctx.args.issuer_secret}")
        return 0
    crs = _load_crs(ctx.args.crs)
    if action == "join":
        secret_raw = Path(ctx.args.issuer_secret).read_bytes()
        issuer_secret = daa.IssuerSecret(sk_iss=daa.Scalar.from_bytes(secret_raw))
        ctx.ensure_init()
        request = ctx.tpm.daa_join_begin(crs)
        wire_req = daa.encode_join_request(request)
        if ctx.args.hex:
            print(f"[join] request  ({len(wire_req)} bytes) {wire_req[:32].hex()}...")
        response = daa.issue(crs, issuer_secret, daa.decode_join_request(wire_req), ctx.rng)
        wire_resp = daa.encode_join_response(response, request.pk_E)
        if ctx.args.hex:
            print(f"[join] response ({len(wire_resp)} bytes) {wire_resp[:32].hex()}...")
        ctx.tpm.daa_join_complete(daa.decode_join_response(wire_resp, request.pk_E))
        ctx.save()
        print("credential installed; pairing check passed")
        return 0
    if action == "sign":
        if ctx.tpm.daa_state is None:
            raise CliError("no credential on card; run `daa join` first")
        message = parse_hex_arg(ctx.args.message, "--message")
        bsn = ctx.args.bsn.encode() if ctx.args.bsn else None
        sig = daa.daa_sign(crs, bsn, ctx.tpm.daa_state.credential, message, ctx.rng)
        print(daa.encode_signature(sig).hex())
        return 0
    if action == "verify":
        message = parse_hex_arg(ctx.args.message, "--message")
        bsn = ctx.args.bsn.encode() if ctx.args.bsn else None
        sig = daa.decode_signature(parse_hex_arg(ctx.args.signature, "--signature"))
        ok = daa.daa_verify(crs, bsn, message, sig)
        print("accept" if ok else "reject")
        return 0 if ok else 1
    raise CliError(f"unknown daa action {action!r}")


def _load_crs(path) -> daa.DaaPublicParams:
    from .groups import G1Element, G2Element, default_params

    raw = Path(path).read_bytes()
    if len(raw) != 33 + 65:
        raise CliError(f"bad crs file {path}")
    return daa.DaaPublicParams(
        group=default_params(),
        gpk1=G1Element.from_bytes(raw[:33]),
        gpk2=G2Element.from_bytes(raw[33:]),
    )


# ---------------------------------------------------------------------------
# Boot and binding.


def cmd_boot(ctx: Context) -> int:
    chain, board_id = boot.load_chain_file(ctx.args.chain, ctx.rng)
    status = 0
    if ctx.args.mode in ("secure", "both"):
        result = boot.secure_boot(chain)
        if result.success:
            print(f"secure boot: OK ({' -> '.join(s.value for s in result.executed)})")
        else:
            print(f"secure boot: ABORT at {result.failed_stage.value}: {result.reason}")
            status = 1
    if ctx.args.mode in ("measured", "both") and status == 0:
        ctx.ensure_init()
        ctx.auto_bind()
        measurements = boot.measured_boot(chain, ctx.tpm, board_id=board_id)
        for m in measurements:
            flag = "" if m.recorded else "  (UNRECORDED)"
            print(f"measured {m.stage.value:5s} -> PCR[{m.pcr_index}] {m.digest.hex()}{flag}")
        print(f"PCR[1] = {ctx.tpm.pcr_read(1).hex()}")
        ctx.save()
    ctx.flush_transcript("boot")
    return status


def cmd_bind(ctx: Context) -> int:
    mode = ctx.args.bind_mode
    ctx.tpm.power_cycle()
    ctx.ensure_init(mode)
    if mode == "db":
        cfg = (binding.load_db_config(ctx.args.config) if ctx.args.config
               else binding.DistanceBoundingConfig())
        if ctx.args.timing:
            model = TimingModel.empirical(load_samples(ctx.args.timing))
        else:
            model = TimingModel.empirical(bundled_rtm_samples())
        if ctx.args.relay_delay:
            model = model.with_relay(ctx.args.relay_delay)
        identity, chain = default_rtm(ctx.rng, deterministic=ctx.seeded)
        channel = binding.make_rtm_channel(identity, chain, model, ctx.rng)
        outcome = binding.run_distance_bounding(ctx.tpm, cfg, channel,
                                                identity.certificate,
                                                identity.public_bytes)
        ctx.save()
        ctx.flush_transcript("bind")
        print(f"{'bound' if outcome.bound else 'rejected'} "
              f"({outcome.successes}/{outcome.rounds_played} within threshold)")
        return 0 if outcome.bound else 1
    # TEE proxy mode
    if ctx.args.device_key:
        scalar = int.from_bytes(Path(ctx.args.device_key).read_bytes(), "big")
        signer = certs.DeterministicSigner(scalar)
    else:
        signer = ctx.new_signer()
    cert = certs.test_vendor_ca().issue(b"cli-device", signer.public_bytes())
    try:
        binding.TeeChannel(ctx.dispatcher, signer, cert, ctx.rng)
    except binding.BindingError as exc:
        print(f"handshake failed: {exc}")
        return 1
    ctx.save()
    ctx.flush_transcript("bind")
    print("TEE channel established; gated commands now require the channel")
    return 0


# ---------------------------------------------------------------------------
# Statistics.


def cmd_stats(ctx: Context) -> int:
    action = ctx.args.stats_action
    if action == "binom":
        value = binding.binom_tail(ctx.args.n, ctx.args.k, ctx.args.p)
        print(repr(value))
        return 0
    if action == "cdf":
        samples = load_samples(ctx.args.samples)
        print(repr(binding.empirical_cdf(samples, ctx.args.t)))
        return 0
    if action == "bandwidth":
        print(repr(binding.min_relay_bandwidth(ctx.args.bits, ctx.args.slack_us)))
        return 0
    if action == "attacker":
        samples = (load_samples(ctx.args.samples) if ctx.args.samples
                   else bundled_rtm_samples())
        cfg = binding.DistanceBoundingConfig(
            threshold_us=ctx.args.threshold, rounds=ctx.args.n,
            success_fraction=ctx.args.f,
        )
        print(repr(binding.attacker_success(ctx.args.relay_delay, samples, cfg)))
        return 0
    raise CliError(f"unknown stats action {action!r}")


# ---------------------------------------------------------------------------
# Benchmarks.

BENCH_COMMANDS = ("key-gen", "hash", "extend", "read", "seal", "unseal", "random")


def cmd_bench(ctx: Context) -> int:
    iterations = ctx.args.iterations
    wanted = ctx.args.commands.split(",") if ctx.args.commands else list(BENCH_COMMANDS)
    for name in wanted:
        if name not in BENCH_COMMANDS:
            raise CliError(f"unknown bench command {name!r}")
    ctx.ensure_init()
    ctx.tpm.unlock_hierarchies()  # benchmark the engine, not the gate
    tpm, rng = ctx.tpm, ctx.rng
    policy_blob = tpm.seal(bytes(16))

    actions = {
        "key-gen": lambda: tpm.create_key(),
        "hash": lambda: tpm.hash_data(bytes(32)),
        "extend": lambda: tpm.pcr_extend(7, bytes(32)),
        "read": lambda: tpm.pcr_read(7),
        "seal": lambda: tpm.seal(bytes(16)),
        "unseal": lambda: tpm.unseal(policy_blob),
        "random": lambda: tpm.get_random(8),
    }
    print(f"# emulator wall-clock timings ({iterations} samples per command, "
          f"95% confidence interval); not comparable to card hardware")
    print(f"{'command':10s} {'mean_ms':>10s} {'ci95_ms':>10s} {'n':>5s}")
    rows = {}
    for name in wanted:
        fn = actions[name]
        fn()  # warm up
        times = []
        for _ in range(iterations):
            t0 = time.perf_counter()
            fn()
            times.append((time.perf_counter() - t0) * 1e3)
        mean = statistics.fmean(times)
        sd = statistics.stdev(times) if len(times) > 1 else 0.0
        ci = 1.96 * sd / (len(times) ** 0.5)
        rows[name] = (mean, ci, len(times))
        print(f"{name:10s} {mean:10.4f} {ci:10.4f} {len(times):5d}")
    return 0


# ---------------------------------------------------------------------------
# Scenario runner.


def cmd_scenario(ctx: Context) -> int:
    from .scenario import run_scenario_file

    status = run_scenario_file(ctx.args.file, seed=ctx.args.seed,
                               echo_hex=ctx.args.hex)
    return status


# ---------------------------------------------------------------------------
# Argument parsing.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cardtpm", description="SIM-card TPM emulator"
    )
    parser.add_argument("--state", metavar="FILE", default=None,
                        help="persistence file for the emulated card")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for bit-reproducible runs")
    parser.add_argument("--hex", action="store_true",
                        help="echo APDU exchanges as hex dumps")
    parser.add_argument("--no-auto-bind", action="store_true",
                        help="do not simulate an RTM binding for gated one-shots")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="power-cycle and initialize the card")
    p.add_argument("--mode", choices=("db", "tee"), default="db")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("extend", help="extend a PCR with a 32-byte digest")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--data", required=True, help="32-byte digest (hex)")
    p.set_defaults(fn=cmd_extend)

    p = sub.add_parser("read", help="read a PCR")
    p.add_argument("--index", type=int, required=True)
    p.set_defaults(fn=cmd_read)

    p = sub.add_parser("seal", help="seal data under a policy")
    p.add_argument("--data", help="payload (hex)")
    p.add_argument("--in", dest="infile", help="payload file")
    p.add_argument("--pcrs", help="bind to these PCRs (comma list)")
    p.add_argument("--authority", help="authority public key (hex) for TPM_Authorize")
    p.add_argument("--authority-pcrs", default="2",
                   help="PCR selection named by the authorized policy")
    p.add_argument("--out", help="write blob to file (default: hex to stdout)")
    p.set_defaults(fn=cmd_seal)

    p = sub.add_parser("unseal", help="unseal a blob")
    p.add_argument("--blob", required=True, help="blob file or hex")
    p.add_argument("--approval", help="signed digest approval file")
    p.add_argument("--out", help="write plaintext to file")
    p.set_defaults(fn=cmd_unseal)

    p = sub.add_parser("key", help="key management")
    ksub = p.add_subparsers(dest="key_action", required=True)
    k = ksub.add_parser("create")
    k.add_argument("--duplicable", action="store_true")
    k.add_argument("--attestation", action="store_true")
    k = ksub.add_parser("duplicate")
    k.add_argument("--handle", type=lambda v: int(v, 0), required=True)
    k.add_argument("--parent-public", required=True, help="target SRK public (hex)")
    k.add_argument("--out")
    k = ksub.add_parser("import")
    k.add_argument("--blob", required=True)
    p.set_defaults(fn=cmd_key)

    p = sub.add_parser("quote", help="attest selected PCRs")
    p.add_argument("--pcrs", required=True)
    p.add_argument("--nonce", required=True, help="8-byte nonce (hex)")
    p.add_argument("--bsn", help="basename for linkable attestation")
    p.set_defaults(fn=cmd_quote)

    p = sub.add_parser("daa", help="anonymous attestation scheme operations")
    dsub = p.add_subparsers(dest="daa_action", required=True)
    d = dsub.add_parser("setup")
    d.add_argument("--crs", default="daa_crs.bin")
    d.add_argument("--issuer-secret", default="daa_issuer.bin")
    d = dsub.add_parser("join")
    d.add_argument("--crs", default="daa_crs.bin")
    d.add_argument("--issuer-secret", default="daa_issuer.bin")
    d = dsub.add_parser("sign")
    d.add_argument("--crs", default="daa_crs.bin")
    d.add_argument("--message", required=True)
    d.add_argument("--bsn")
    d = dsub.add_parser("verify")
    d.add_argument("--crs", default="daa_crs.bin")
    d.add_argument("--message", required=True)
    d.add_argument("--signature", required=True)
    d.add_argument("--bsn")
    p.set_defaults(fn=cmd_daa)

    p = sub.add_parser("boot", help="run a boot chain")
    bsub = p.add_subparsers(dest="boot_action", required=True)
    b = bsub.add_parser("run")
    b.add_argument("--chain", required=True, help="chain description file")
    b.add_argument("--mode", choices=("secure", "measured", "both"), default="both")
    p.set_defaults(fn=cmd_boot)

    p = sub.add_parser("bind", help="bind the card to an RTM")
    bsub = p.add_subparsers(dest="bind_mode", required=True)
    b = bsub.add_parser("db", help="distance-bounding binding")
    b.add_argument("--config", help="distance-bounding config file")
    b.add_argument("--timing", help="timing samples file (one value per line)")
    b.add_argument("--relay-delay", type=float, default=0.0, metavar="US")
    b = bsub.add_parser("tee", help="TEE-proxy channel binding")
    b.add_argument("--device-key", help="32-byte device key scalar file")
    p.set_defaults(fn=cmd_bind)

    p = sub.add_parser("stats", help="protocol statistics")
    ssub = p.add_subparsers(dest="stats_action", required=True)
    s = ssub.add_parser("binom")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--p", type=float, required=True)
    s = ssub.add_parser("cdf")
    s.add_argument("--samples", required=True)
    s.add_argument("--t", type=float, required=True)
    s = ssub.add_parser("bandwidth")
    s.add_argument("--bits", type=int, required=True)
    s.add_argument("--slack-us", type=float, required=True)
    s = ssub.add_parser("attacker")
    s.add_argument("--relay-delay", type=float, required=True)
    s.add_argument("--samples")
    s.add_argument("--threshold", type=float, default=721.0)
    s.add_argument("--n", type=int, default=30)
    s.add_argument("--f", type=float, default=0.47)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("bench", help="emulator command timings")
    p.add_argument("--iterations", type=int, default=50)
    p.add_argument("--commands", help="comma list " + ",".join(BENCH_COMMANDS))
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("scenario", help="run a scripted scenario file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_scenario)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        ctx = Context(args)
        return args.fn(ctx)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (binding.BindingError, boot.BootError, daa.DaaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
