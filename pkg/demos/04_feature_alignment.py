"""
Adaptive feature alignment
==========================

The residual between the input image and its w+ reconstruction is encoded
into a feature map F_dI. Cross-attention aligns it to the generator features
F (queries from F, keys and values from F_dI), and FiLM heads turn the
aligned map into per-position scale and shift: F* = gamma * F + beta.

At initialization gamma = 1 and beta = 0, so F* = F bit-exactly and the
pipeline starts from the w+ result.
"""
import torch

from _tiny import tiny_config
from triplane_inversion.afa import attention
from triplane_inversion.generator import TriPlaneGenerator
from triplane_inversion.training import build_afa

# --- Attention by hand ---
q = torch.tensor([[[1.0, 0.0]]])
k = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
v = torch.tensor([[[1.0], [2.0]]])
out, weights = attention(q, k, v)
print("weights:", weights.numpy().round(4), "output:", round(out.item(), 4))

# --- Identity initialization ---
cfg = tiny_config()
torch.manual_seed(0)
gen = TriPlaneGenerator(cfg.generator, cfg.render).eval()
afa = build_afa(cfg, gen).eval()
wp = gen.w_avg.expand(1, gen.num_ws, -1)
with torch.no_grad():
    feats = gen.synthesis(wp)[0].tapped
    image = torch.rand(1, 32, 32, 3)
    recon = torch.rand(1, 32, 32, 3)
    refined = afa(image, recon, feats)
print("F* == F at init:", torch.equal(refined.fstar, feats))
print("attention rows sum to one:", torch.allclose(refined.attention.sum(-1), torch.ones(1)))

# --- One gradient step moves the FiLM heads ---
opt = torch.optim.Adam(afa.parameters(), lr=1e-3)
target = feats + 0.05 * torch.randn_like(feats)
for step in range(5):
    refined = afa(image, recon, feats)
    loss = (refined.fstar - target).square().mean()
    opt.zero_grad()
    loss.backward()
    opt.step()
    print(f"step {step}: feature loss {loss.item():.6f}, |dF| {refined.delta.norm().item():.4f}")
