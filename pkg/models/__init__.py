# Pydantic models: rate variants, triplets, reports and experiment configs
