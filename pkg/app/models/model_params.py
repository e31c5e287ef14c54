import math

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ModelParams(BaseModel):
    """Paramètres de la chaîne XXZ désordonnée : couplages, champs locaux, bloc S.

    Les sites sont indexés à partir de 1. `block` est l'intervalle fermé
    (premier site, dernier site) du sous-système contrôlé.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    N: int = Field(8, ge=2, le=16)
    J_perp: float = 1.0
    J_z: float = 0.2
    h: tuple[float, ...] = ()
    block: tuple[int, int] = (1, 2)

    @model_validator(mode="before")
    @classmethod
    def _zero_fields(cls, data):
        # h omis : champs nuls (modèle propre)
        if isinstance(data, dict) and not data.get("h"):
            try:
                n = int(data.get("N", 8))
            except (TypeError, ValueError):
                return data
            data = {**data, "h": (0.0,) * max(n, 0)}
        return data

    @model_validator(mode="after")
    def _check(self):
        if self.N % 2:
            raise ValueError(f"N doit être pair, reçu {self.N}")
        if len(self.h) != self.N:
            raise ValueError(f"h doit contenir {self.N} champs, reçu {len(self.h)}")
        if not all(math.isfinite(x) for x in (self.J_perp, self.J_z, *self.h)):
            raise ValueError("couplages et champs doivent être finis")
        start, end = self.block
        if not 1 <= start <= end <= self.N:
            raise ValueError(f"bloc {self.block} hors de la chaîne 1..{self.N}")
        if end - start + 1 > 2:
            raise ValueError("blocs de plus de 2 sites non supportés")
        return self

    @property
    def block_sites(self) -> tuple[int, ...]:
        return tuple(range(self.block[0], self.block[1] + 1))

    @property
    def d_S(self) -> int:
        return 2 ** len(self.block_sites)

    @property
    def bonds(self) -> list[tuple[int, int]]:
        return [(i, i + 1) for i in range(1, self.N)]

    def with_fields(self, h) -> "ModelParams":
        # model_copy ne revalide pas : on reconstruit
        return ModelParams(**{**self.model_dump(), "h": tuple(float(x) for x in h)})
