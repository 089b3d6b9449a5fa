"""Parameter accounting for the module lattice: SE only, +StyleRM, +DCA, both.

Also confirms that running the criss-cross block twice costs no extra weights.
"""

from fetr import NetworkSpec, build_network, count_parameters

variants = {
    "SE only": NetworkSpec(style_rm=False, dca_stages=()),
    "+StyleRM": NetworkSpec(style_rm=True, dca_stages=()),
    "+DCA": NetworkSpec(style_rm=False),
    "+StyleRM +DCA": NetworkSpec(),
}

base = None
for label, spec in variants.items():
    total, parts = count_parameters(build_network(spec))
    base = base or total
    extras = ", ".join(f"{k}={v}" for k, v in parts.items() if k in ("style_rm", "dca") and v)
    print(f"{label:15s} {total:9,d}  (+{total - base:,d})  {extras}")

one = count_parameters(build_network(NetworkSpec(dca_passes=1)))[0]
two = count_parameters(build_network(NetworkSpec(dca_passes=2)))[0]
print(f"\none DCA pass: {one:,d} parameters; two passes: {two:,d}")
