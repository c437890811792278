"""Parse a small method, flatten it, and show the type codes next to each token."""

from dmacos.asbt import TypeCode, parse_toy, to_asbt, to_sbt
from dmacos.corpus import make_sample

SOURCE = """def loadUserConfig(path) {
  user_data = read_user(path)
  config_value = fetch_config(user_data)
  loadUserConfig(config_value)
}"""

tree = parse_toy(SOURCE)
print("SBT:")
print(" ".join(to_sbt(tree)))

seq = to_asbt(tree)
print("\naSBT (token / type):")
for tok, ty in zip(seq.tokens, seq.types):
    print("  %-14s %d %s" % (tok, ty, TypeCode(ty).name))

# the recursive call is replaced so the body never leaks the name
sample = make_sample({"id": "demo", "ast": tree.to_json(), "name": "loadUserConfig", "summary": "load the user config"})
print("\nname tokens:", sample.name_tokens)
print("masked body:", " ".join(sample.body_tokens))
