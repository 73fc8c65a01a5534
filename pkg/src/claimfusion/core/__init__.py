# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Types and stateful building blocks: tensors, records, layers, fusion blocks and models.
"""
