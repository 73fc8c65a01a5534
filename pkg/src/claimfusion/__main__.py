# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from claimfusion.cli import app

app(prog_name="claimfusion")
