# Copyright 2024 The padeepc developers
# SPDX-License-Identifier: Apache-2
from padeepc.common import __version__
