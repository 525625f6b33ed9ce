"""Calibration: reference memorization + curriculum run (criteria 5 and 6)."""
import json
import time

from capvit.data import Corpus, CorpusSpec
from capvit.encoder import EncoderConfig
from capvit.genhead import DecoderConfig
from capvit.pipeline import ModelConfig
from capvit.probe import exact_match, perplexity
from capvit.trainer import StageConfig, TrainConfig, run_training

t0 = time.time()
spec = CorpusSpec(0, 64, "recap_v2", 0.0, 32)
corpus32 = Corpus.from_spec(spec)
T = corpus32.max_caption_len()
enc = EncoderConfig(image_size=32, patch_size=4, width=64, depth=4, heads=4)
dec = DecoderConfig(width=64, depth=4, heads=4, vocab_size=corpus32.vocab.size,
                    max_caption_len=T, keep_ratio=0.35)
model = ModelConfig(encoder=enc, decoder=dec)
cfg = TrainConfig(
    pipeline="v2_generative",
    stages=(StageConfig(32, 700, 32, 3e-3, warmup=60),
            StageConfig(64, 200, 32, 1e-3, warmup=20)),
    seed=0,
)
res = run_training(model, cfg, spec, out_dir="calib_out")
stage1 = [r for r in res.rows if r.stage == 0]
stage2 = [r for r in res.rows if r.stage == 1]
out = {
    "elapsed_s": time.time() - t0,
    "stage1_final_loss": stage1[-1].loss,
    "stage1_min_loss": min(r.loss for r in stage1),
    "stage2_first_loss": stage2[0].loss,
    "stage2_final_loss": stage2[-1].loss,
}
print(json.dumps(out, indent=1), flush=True)

# evaluate: stage-2 weights are at 64x64; re-rendered corpus
corpus64 = corpus32.at_resolution(64)
em64 = exact_match(res.pipeline, corpus64)
ppl64 = perplexity(res.pipeline, corpus64)
print("stage2 exact_match@64:", em64, "perplexity@64:", ppl64, flush=True)
print("total elapsed:", time.time() - t0, flush=True)
